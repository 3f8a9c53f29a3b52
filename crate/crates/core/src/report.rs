//! Table and sweep reports.
//!
//! Every report carries a header of `key: value` pairs (config hashes, seeds).
//! CSV output writes the header as `#` comment lines; JSON output nests it
//! under `"header"` next to `"rows"`.

use serde::Serialize;

use crate::cost_model::{
    analytic_counts, layer_cost, max_cell_writes_per_dot, simulate_sparsity, utilization, AddScheme, Calibration,
};
use crate::error::{Error, Result};
use crate::mapping::{plan, ConvShape, HwConfig, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AddKind {
    Scalar,
    Vector,
}

impl AddKind {
    pub fn parse(s: &str) -> Result<AddKind> {
        match s {
            "scalar" => Ok(AddKind::Scalar),
            "vector" => Ok(AddKind::Vector),
            _ => Err(Error::Parameter(format!("unknown addition kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AddBenchRow {
    pub scheme: &'static str,
    pub kind: AddKind,
    pub bits: u32,
    pub length: usize,
    pub latency_ns: f64,
    pub critical_path_ns: f64,
}

/// Scalar and vector addition latency for every addition scheme.
pub fn add_bench(cal: &Calibration, bits: u32, kinds: &[AddKind], length: usize, cols: usize) -> Result<Vec<AddBenchRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        for s in AddScheme::ALL {
            let (latency_ns, critical_path_ns, length) = match kind {
                AddKind::Scalar => (cal.scalar_add_latency(s, bits)?, cal.scalar_critical_path(s, bits)?, 1),
                AddKind::Vector => (
                    cal.vector_add_latency(s, bits, length, cols)?,
                    cal.vector_critical_path(s, bits, length, cols)?,
                    length,
                ),
            };
            rows.push(AddBenchRow { scheme: s.name(), kind, bits, length, latency_ns, critical_path_ns });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapCompareRow {
    pub scheme: &'static str,
    pub cmas: usize,
    pub x_load_ns: f64,
    pub x_writes: u64,
    pub w_load_ns: f64,
    pub w_writes: u64,
    pub parallel_cols: u64,
    pub utilization: f64,
    pub time_ns: f64,
    pub speedup: f64,
    pub energy_j: f64,
    pub energy_ratio: f64,
    pub max_cell_writes: u64,
}

/// One row per mapping scheme; speedup and energy ratio are relative to Direct-OS.
pub fn map_compare(shape: &ConvShape, hw: &HwConfig, cal: &Calibration) -> Result<Vec<MapCompareRow>> {
    let mut rows = Vec::new();
    for scheme in Scheme::ALL {
        let p = plan(scheme, shape, hw)?;
        let counts = analytic_counts(&p, hw, cal);
        let cost = layer_cost(&p, hw, cal);
        rows.push(MapCompareRow {
            scheme: scheme.name(),
            cmas: hw.num_cmas,
            x_load_ns: cost.time.x_load,
            x_writes: counts.x_elems,
            w_load_ns: cost.time.w_load,
            w_writes: counts.w_elems,
            parallel_cols: p.parallel_cols,
            utilization: utilization(&p, hw, cal),
            time_ns: cost.total_time(),
            speedup: 0.0,
            energy_j: cost.total_energy(),
            energy_ratio: 0.0,
            max_cell_writes: max_cell_writes_per_dot(scheme, hw),
        });
    }
    let (t0, e0) = (rows[0].time_ns, rows[0].energy_j);
    for r in &mut rows {
        r.speedup = t0 / r.time_ns;
        r.energy_ratio = r.energy_j / e0;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityRow {
    pub sparsity: f64,
    pub speedup_closed: f64,
    pub energy_eff_closed: f64,
    pub speedup_sim: f64,
    pub energy_eff_sim: f64,
}

/// Grid `from, from + step, ...` up to `to` inclusive (with a small tolerance).
pub fn sparsity_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(0.0 <= from && from <= to && to < 1.0 && step.is_finite() && step > 0.0) {
        return Err(Error::Parameter(format!("bad sparsity range {from}..{to} step {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((from + k as f64 * step) * 1e9).round() / 1e9).collect())
}

/// Closed-form and simulated speedup and energy efficiency over ParaPIM.
pub fn sweep_sparsity(cal: &Calibration, grid: &[f64], j: usize, seed: u64) -> Result<Vec<SparsityRow>> {
    grid.iter()
        .enumerate()
        .map(|(k, &s)| {
            let (speedup_closed, energy_eff_closed) = cal.sparsity_speedup(s)?;
            let (speedup_sim, energy_eff_sim) = simulate_sparsity(cal, s, j, seed.wrapping_add(k as u64))?;
            Ok(SparsityRow { sparsity: s, speedup_closed, energy_eff_closed, speedup_sim, energy_eff_sim })
        })
        .collect()
}

pub type Header = Vec<(String, String)>;

pub fn to_csv<T: Serialize>(header: &Header, rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for (k, v) in header {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
    Ok(out)
}

pub fn to_json<T: Serialize>(header: &Header, rows: &[T]) -> Result<String> {
    let head: serde_json::Map<String, serde_json::Value> =
        header.iter().map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone()))).collect();
    let doc = serde_json::json!({ "header": head, "rows": rows });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}
