//! Layer and network execution on simulated arrays, plus the integer
//! reference pipeline they are checked against.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ledger::{CostLedger, WearLedger};
use crate::mapping::{fixed_layout, img2col, layout_with_intervals, plan, ConvShape, HwConfig, MappingPlan, Scheme};
use crate::memory_array::{Cma, ColumnMask, OperandSlot};
use crate::model::{DpuStage, Stage, TwnModel};
use crate::sparse_control::{
    encode_weight, extend_binary_weight, reduce_across_cmas, AccPolicy, AccumulatorPool, Sacu, WeightRegisterFile,
};

/// Threshold ternarization: +1 above `th_high`, -1 below `th_low`, else 0.
pub fn ternarize(w: &[f64], th_low: f64, th_high: f64) -> Result<Vec<i8>> {
    if th_low.partial_cmp(&th_high) != Some(std::cmp::Ordering::Less) {
        return Err(Error::Parameter(format!("thresholds {th_low} >= {th_high}")));
    }
    Ok(w.iter()
        .map(|&v| {
            if v > th_high {
                1
            } else if v < th_low {
                -1
            } else {
                0
            }
        })
        .collect())
}

/// Round half away from zero, then clamp to the unsigned `bits` range.
pub fn requantize(v: f64, scale: f64, bits: u32) -> u8 {
    let max = ((1u32 << bits) - 1) as f64;
    (v / scale).round().clamp(0.0, max) as u8
}

/// Batch norm, ReLU and requantization of an `[n][channels][spatial]` tensor.
pub fn dpu_apply(
    y: &[i64],
    channels: usize,
    spatial: usize,
    dpu: &DpuStage,
    bits: u32,
    ledger: &mut CostLedger,
) -> Result<Vec<u8>> {
    if !(dpu.requant_scale.is_finite() && dpu.requant_scale > 0.0) {
        return Err(Error::Parameter("requant_scale must be > 0".into()));
    }
    if bits == 0 || bits > 8 {
        return Err(Error::Parameter(format!("activation bits {bits} outside 1..=8")));
    }
    if channels == 0 || spatial == 0 || !y.len().is_multiple_of(channels * spatial) {
        return Err(Error::Shape(format!("{} outputs do not tile {channels}x{spatial}", y.len())));
    }
    if let Some(bn) = &dpu.bn {
        bn.validate(channels)?;
    }
    ledger.dpu_ops += y.len() as u64;
    Ok(y.iter()
        .enumerate()
        .map(|(k, &v)| {
            let ch = (k / spatial) % channels;
            let mut x = v as f64;
            if let Some(bn) = &dpu.bn {
                x = (x - bn.mean[ch]) / (bn.var[ch] + bn.eps).sqrt();
            }
            if dpu.relu {
                x = x.max(0.0);
            }
            requantize(x, dpu.requant_scale, bits)
        })
        .collect())
}

/// Direct convolution; output is `[n][kn][oh][ow]`.
pub fn reference_convolution(x: &[u8], w: &[i8], shape: &ConvShape) -> Result<Vec<i64>> {
    shape.validate()?;
    if x.len() != shape.input_len() || w.len() != shape.weight_len() {
        return Err(Error::Shape(format!(
            "got {} inputs and {} weights, shape needs {} and {}",
            x.len(),
            w.len(),
            shape.input_len(),
            shape.weight_len()
        )));
    }
    let s = shape;
    let (oh, ow) = (s.oh(), s.ow());
    let mut y = vec![0i64; s.n * s.kn * oh * ow];
    for b in 0..s.n {
        for f in 0..s.kn {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0i64;
                    for ch in 0..s.c {
                        for ky in 0..s.kh {
                            for kx in 0..s.kw {
                                let iy = (oy * s.s + ky) as isize - s.p as isize;
                                let ix = (ox * s.s + kx) as isize - s.p as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let xv = x[((b * s.c + ch) * s.h + iy as usize) * s.w + ix as usize] as i64;
                                acc += xv * w[((f * s.c + ch) * s.kh + ky) * s.kw + kx] as i64;
                            }
                        }
                    }
                    y[((b * s.kn + f) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct LayerResult {
    /// Pre-DPU outputs, `[n][kn][oh][ow]`.
    pub outputs: Vec<i64>,
    /// Post-DPU activations, same layout.
    pub activations: Vec<u8>,
    pub ledger: CostLedger,
    pub wear: WearLedger,
    pub plan: MappingPlan,
}

struct ArrayUnit {
    cma: Cma,
    sacu: Sacu,
}

/// Executes one conv stage on simulated arrays following the scheme's grid schedule.
pub fn run_layer(stage: &Stage, x: &[u8], hw: &HwConfig, scheme: Scheme, binary: bool, bits: u32) -> Result<LayerResult> {
    if scheme == Scheme::DirectOs {
        return Err(Error::Unsupported("Direct-OS is modelled by cost only".into()));
    }
    let shape = stage.shape;
    let plan = plan(scheme, &shape, hw)?;
    let g = hw.geometry;
    if bits == 0 || bits > g.operand_bits || bits > 8 {
        return Err(Error::Hardware(format!("{bits}-bit activations do not fit {}-bit operands", g.operand_bits)));
    }
    if stage.weights.len() != shape.weight_len() {
        return Err(Error::Shape(format!("{} weights, shape needs {}", stage.weights.len(), shape.weight_len())));
    }
    let block = plan.block_rows;
    let worst = block as i64 * ((1i64 << g.operand_bits) - 1);
    if worst > (1i64 << (g.acc_bits - 1)) - 1 {
        return Err(Error::Hardware(format!(
            "{block} operands of {} bits can overflow {}-bit accumulators",
            g.operand_bits, g.acc_bits
        )));
    }
    let ax = img2col(x, &shape)?;
    let (layout, policy) = match scheme {
        Scheme::Img2ColCs => (layout_with_intervals(block, hw)?, AccPolicy::Rotating),
        _ => (fixed_layout(block, hw)?, AccPolicy::Fixed),
    };
    let (j, cols_total, mw) = (shape.j(), shape.n * shape.i(), hw.mw());
    let jb_count = j.div_ceil(block);
    let encode = if binary { extend_binary_weight } else { encode_weight };

    let mut units: BTreeMap<usize, ArrayUnit> = BTreeMap::new();
    let mut partial = vec![0i64; shape.kn * cols_total * jb_count];
    for step in &plan.schedule {
        let unit = match units.entry(step.cma) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                let mut sacu = Sacu::new(AccumulatorPool::new(layout.positions.clone(), policy)?);
                sacu.regs = WeightRegisterFile::with_capacity(hw.weight_regs);
                e.insert(ArrayUnit { cma: Cma::new(g)?, sacu })
            }
        };
        let rows = step.j_block * block..j.min((step.j_block + 1) * block);
        let cols = step.col_block * mw..cols_total.min((step.col_block + 1) * mw);
        let ops = &layout.operands[..rows.len()];
        for q in cols.clone() {
            for (k, r) in rows.clone().enumerate() {
                let slot = OperandSlot::unsigned(q - cols.start, ops[k].base_row, g.operand_bits);
                unit.cma.write_operand(slot, ax.get(q, r) as i64)?;
            }
        }
        let mask = ColumnMask::first(g.cols, cols.len());
        for &f in &step.filters {
            let codes = rows
                .clone()
                .map(|r| encode(stage.weights[f * j + r] as i64))
                .collect::<Result<Vec<_>>>()?;
            unit.sacu.load_codes(&mut unit.cma, &codes)?;
            let out = unit.sacu.dot_product(&mut unit.cma, ops, &mask)?;
            for q in cols.clone() {
                let slot = OperandSlot::signed(q - cols.start, out.result.base_row, g.acc_bits);
                partial[(f * cols_total + q) * jb_count + step.j_block] = unit.cma.read_operand(slot)?;
            }
        }
    }

    let mut engine = CostLedger {
        load_rounds: plan.steps() as u64,
        ..Default::default()
    };
    let (i, kn) = (shape.i(), shape.kn);
    let mut outputs = vec![0i64; shape.n * kn * i];
    for f in 0..kn {
        for q in 0..cols_total {
            let base = (f * cols_total + q) * jb_count;
            let (b, pos) = (q / i, q % i);
            outputs[(b * kn + f) * i + pos] = reduce_across_cmas(&partial[base..base + jb_count], &mut engine);
        }
    }
    let activations = dpu_apply(&outputs, kn, i, &stage.dpu, bits, &mut engine)?;
    let ledger = units.values().map(|u| *u.cma.ledger()).sum::<CostLedger>() + engine;
    let wear = WearLedger {
        arrays: units.into_values().map(|u| u.cma.wear().clone()).collect(),
    };
    Ok(LayerResult {
        outputs,
        activations,
        ledger,
        wear,
        plan,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub shape: ConvShape,
    pub steps: usize,
    pub arrays_used: usize,
    pub max_cell_writes: u32,
    pub ledger: CostLedger,
}

#[derive(Debug, Clone)]
pub struct NetworkResult {
    /// Pre-DPU outputs of the last layer.
    pub outputs: Vec<i64>,
    /// Post-DPU activations of the last layer.
    pub activations: Vec<u8>,
    pub ledger: CostLedger,
    pub layers: Vec<LayerReport>,
}

fn check_input(model: &TwnModel, input: &[u8], n: usize) -> Result<()> {
    let s = model.input;
    if input.len() != n * s.c * s.h * s.w {
        return Err(Error::Shape(format!(
            "input has {} elements, batch of {n} needs {}",
            input.len(),
            n * s.c * s.h * s.w
        )));
    }
    if model.activation_bits < 8 && input.iter().any(|&v| v >> model.activation_bits != 0) {
        return Err(Error::Overflow {
            value: *input.iter().max().unwrap() as i64,
            bits: model.activation_bits,
            signedness: "unsigned",
        });
    }
    Ok(())
}

/// Runs every stage of `model` on simulated arrays.
pub fn run_network(model: &TwnModel, input: &[u8], n: usize, hw: &HwConfig, scheme: Scheme) -> Result<NetworkResult> {
    check_input(model, input, n)?;
    let mut x = input.to_vec();
    let mut ledger = CostLedger::default();
    let mut layers = Vec::new();
    let mut outputs = Vec::new();
    for stage in model.stages(n)? {
        let r = run_layer(&stage, &x, hw, scheme, model.binary, model.activation_bits)?;
        ledger += r.ledger;
        layers.push(LayerReport {
            name: stage.name.clone(),
            shape: stage.shape,
            steps: r.plan.steps(),
            arrays_used: r.wear.arrays.len(),
            max_cell_writes: r.wear.max_single_cell(),
            ledger: r.ledger,
        });
        x = r.activations;
        outputs = r.outputs;
    }
    Ok(NetworkResult {
        outputs,
        activations: x,
        ledger,
        layers,
    })
}

/// The same pipeline with direct convolution in place of the arrays.
pub fn reference_network(model: &TwnModel, input: &[u8], n: usize) -> Result<(Vec<i64>, Vec<u8>)> {
    check_input(model, input, n)?;
    let mut x = input.to_vec();
    let mut y = Vec::new();
    let mut scratch = CostLedger::default();
    for stage in model.stages(n)? {
        y = reference_convolution(&x, &stage.weights, &stage.shape)?;
        x = dpu_apply(&y, stage.shape.kn, stage.shape.i(), &stage.dpu, model.activation_bits, &mut scratch)?;
    }
    Ok((y, x))
}
