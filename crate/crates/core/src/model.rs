//! Network descriptions.
//!
//! A model is a JSON file with an input shape and a layer list. Every conv or
//! fc layer owns the DPU stage that follows it: any `batchnorm` and `relu`
//! layers up to the next conv/fc, then requantization with its
//! `requant_scale`. The DPU always applies batch norm before ReLU.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::ConvShape;
use crate::tensor::Tensor;

fn default_bits() -> u32 {
    8
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

/// Ternary weights inline or in a tensor blob next to the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSource {
    Inline(Vec<i64>),
    Blob { blob: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kn: usize,
        kh: usize,
        kw: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        weights: WeightSource,
        requant_scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<serde_json::Value>,
    },
    Fc {
        out_features: usize,
        weights: WeightSource,
        requant_scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<serde_json::Value>,
    },
    Relu,
    Batchnorm {
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwnModel {
    #[serde(default = "default_bits")]
    pub activation_bits: u32,
    /// Binary weights: zeros are illegal and never skipped.
    #[serde(default)]
    pub binary: bool,
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BnParams {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.var.len() != channels {
            return Err(Error::Shape(format!(
                "batch norm has {}/{} entries for {channels} channels",
                self.mean.len(),
                self.var.len()
            )));
        }
        let finite = self.mean.iter().chain(&self.var).all(|v| v.is_finite()) && self.eps.is_finite();
        if !finite || self.eps < 0.0 || self.var.iter().any(|&v| v < 0.0 || v + self.eps <= 0.0) {
            return Err(Error::Parameter("batch norm needs finite mean, var >= 0 and var + eps > 0".into()));
        }
        Ok(())
    }
}

/// Post-processing applied by the DPU after one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpuStage {
    pub relu: bool,
    pub bn: Option<BnParams>,
    pub requant_scale: f64,
}

/// One conv (or lowered fc) layer ready for execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    pub shape: ConvShape,
    /// `[kn][c][kh][kw]`, values in {-1, 0, +1}.
    pub weights: Vec<i8>,
    pub dpu: DpuStage,
}

impl TwnModel {
    pub fn from_json(text: &str) -> Result<TwnModel> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses a model file and inlines weight blobs referenced relative to it.
    pub fn load(path: &Path) -> Result<TwnModel> {
        let mut m = Self::from_json(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for layer in &mut m.layers {
            if let LayerSpec::Conv { weights, .. } | LayerSpec::Fc { weights, .. } = layer {
                if let WeightSource::Blob { blob } = weights {
                    *weights = WeightSource::Inline(Tensor::read(&dir.join(&*blob))?.to_i64()?);
                }
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Lowers the layer list to executable stages for a batch of `n`.
    pub fn stages(&self, n: usize) -> Result<Vec<Stage>> {
        if self.activation_bits == 0 || self.activation_bits > 8 {
            return Err(Error::Parameter(format!("activation_bits {} outside 1..=8", self.activation_bits)));
        }
        let InputShape { mut c, mut h, mut w } = self.input;
        let mut stages: Vec<Stage> = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv { kn, kh, kw, stride, padding, weights, requant_scale, bias } => {
                    reject_bias(idx, bias)?;
                    let shape = ConvShape { n, c, h, w, kn: *kn, kh: *kh, kw: *kw, s: *stride, p: *padding };
                    shape.validate()?;
                    let wts = self.check_weights(idx, weights, shape.weight_len())?;
                    stages.push(new_stage(format!("conv{idx}"), shape, wts, *requant_scale)?);
                    (c, h, w) = (*kn, shape.oh(), shape.ow());
                }
                LayerSpec::Fc { out_features, weights, requant_scale, bias } => {
                    reject_bias(idx, bias)?;
                    let shape = ConvShape { n, c: c * h * w, h: 1, w: 1, kn: *out_features, kh: 1, kw: 1, s: 1, p: 0 };
                    shape.validate()?;
                    let wts = self.check_weights(idx, weights, shape.weight_len())?;
                    stages.push(new_stage(format!("fc{idx}"), shape, wts, *requant_scale)?);
                    (c, h, w) = (*out_features, 1, 1);
                }
                LayerSpec::Relu => {
                    let s = stages.last_mut().ok_or_else(|| orphan(idx))?;
                    if s.dpu.relu {
                        return Err(Error::Shape(format!("layer {idx}: second relu in one DPU stage")));
                    }
                    s.dpu.relu = true;
                }
                LayerSpec::Batchnorm { mean, var, eps } => {
                    let s = stages.last_mut().ok_or_else(|| orphan(idx))?;
                    let bn = BnParams { mean: mean.clone(), var: var.clone(), eps: *eps };
                    bn.validate(c)?;
                    if s.dpu.bn.replace(bn).is_some() {
                        return Err(Error::Shape(format!("layer {idx}: second batchnorm in one DPU stage")));
                    }
                }
            }
        }
        if stages.is_empty() {
            return Err(Error::Shape("model has no conv or fc layer".into()));
        }
        Ok(stages)
    }

    fn check_weights(&self, idx: usize, src: &WeightSource, len: usize) -> Result<Vec<i8>> {
        let WeightSource::Inline(v) = src else {
            return Err(Error::Format(format!("layer {idx}: weight blob not loaded")));
        };
        if v.len() != len {
            return Err(Error::Shape(format!("layer {idx}: {} weights, shape needs {len}", v.len())));
        }
        v.iter()
            .map(|&x| match x {
                -1 | 1 => Ok(x as i8),
                0 if !self.binary => Ok(0),
                _ => Err(Error::IllegalWeight(format!("layer {idx}: weight {x}"))),
            })
            .collect()
    }
}

fn new_stage(name: String, shape: ConvShape, weights: Vec<i8>, requant_scale: f64) -> Result<Stage> {
    if !(requant_scale.is_finite() && requant_scale > 0.0) {
        return Err(Error::Parameter(format!("{name}: requant_scale must be > 0")));
    }
    Ok(Stage { name, shape, weights, dpu: DpuStage { relu: false, bn: None, requant_scale } })
}

fn reject_bias(idx: usize, bias: &Option<serde_json::Value>) -> Result<()> {
    match bias {
        Some(_) => Err(Error::Unsupported(format!("layer {idx}: bias terms are not supported"))),
        None => Ok(()),
    }
}

fn orphan(idx: usize) -> Error {
    Error::Shape(format!("layer {idx}: relu/batchnorm must follow a conv or fc layer"))
}
