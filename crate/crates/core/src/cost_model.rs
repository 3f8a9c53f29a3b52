//! Latency and energy of additions and whole layers.
//!
//! Bit-serial schemes (FAT, ParaPIM, GraphS) spend one read, one SA
//! evaluation and one write per bit; ParaPIM and GraphS additionally write
//! the carry back to the array and read it again. STT-CiM adds a whole row
//! at once and pays for ripple-carry propagation instead.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::CostLedger;
use crate::mapping::{HwConfig, MappingPlan, Scheme};
use crate::memory_array::{Cma, ColumnMask, OperandSlot};
use crate::sparse_control::{AccPolicy, AccumulatorPool, Sacu};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddScheme {
    Fat,
    SttCim,
    ParaPim,
    GraphS,
}

impl AddScheme {
    pub const ALL: [AddScheme; 4] = [AddScheme::SttCim, AddScheme::ParaPim, AddScheme::GraphS, AddScheme::Fat];

    pub fn name(self) -> &'static str {
        match self {
            AddScheme::Fat => "FAT",
            AddScheme::SttCim => "STT-CiM",
            AddScheme::ParaPim => "ParaPIM",
            AddScheme::GraphS => "GraphS",
        }
    }

    pub fn parse(s: &str) -> Result<AddScheme> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "fat" => Ok(AddScheme::Fat),
            "sttcim" => Ok(AddScheme::SttCim),
            "parapim" => Ok(AddScheme::ParaPim),
            "graphs" => Ok(AddScheme::GraphS),
            _ => Err(Error::Parameter(format!("unknown addition scheme '{s}'"))),
        }
    }

    pub fn is_bit_serial(self) -> bool {
        self != AddScheme::SttCim
    }
}

/// Per-scheme SA evaluation time for one bit (for STT-CiM, the SUM path).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerScheme {
    pub fat: f64,
    pub stt_cim: f64,
    pub para_pim: f64,
    pub graph_s: f64,
}

impl PerScheme {
    pub fn get(&self, s: AddScheme) -> f64 {
        match s {
            AddScheme::Fat => self.fat,
            AddScheme::SttCim => self.stt_cim,
            AddScheme::ParaPim => self.para_pim,
            AddScheme::GraphS => self.graph_s,
        }
    }

    fn values(&self) -> [f64; 4] {
        [self.fat, self.stt_cim, self.para_pim, self.graph_s]
    }
}

/// Times in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    pub t_read: f64,
    pub t_write: f64,
    /// Carry propagation per bit inside the STT-CiM adder.
    pub t_carry: f64,
    pub t_sum: PerScheme,
    /// Device-wide activation load round.
    pub t_load_round: f64,
    pub t_weight_load: f64,
    /// One closed-form computing-time unit on one array.
    pub t_compute_unit: f64,
    pub t_reduce: f64,
    pub t_dpu_per_elem: f64,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            t_read: 1.0,
            t_write: 7.5,
            t_carry: 0.033828125,
            t_sum: PerScheme {
                fat: 0.14125,
                stt_cim: 0.170703125,
                para_pim: 0.30875,
                graph_s: 0.1475,
            },
            t_load_round: 2708.5,
            t_weight_load: 0.0021086,
            t_compute_unit: 25.0566,
            t_reduce: 0.01,
            t_dpu_per_elem: 1e-4,
        }
    }
}

/// Energies in joules per event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// SA power relative to FAT.
    pub power_ratio: PerScheme,
    /// One 8-bit addition of a dense layer, including its row activations.
    pub e_add: f64,
    pub e_load_round: f64,
    pub e_reg_load: f64,
    pub e_reduce: f64,
    pub e_dpu: f64,
    pub e_sa_cycle: f64,
    pub e_cell_write: f64,
    pub e_cell_read: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            power_ratio: PerScheme {
                fat: 1.0,
                stt_cim: 1.0,
                para_pim: 1.22,
                graph_s: 1.0,
            },
            e_add: 7.3373e-9,
            e_load_round: 0.27,
            e_reg_load: 1e-9,
            e_reduce: 2e-9,
            e_dpu: 1e-12,
            e_sa_cycle: 2e-14,
            e_cell_write: 1e-13,
            e_cell_read: 1e-14,
        }
    }
}

/// Layer-level modelling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Arrays written concurrently during one activation load round.
    pub load_arrays: usize,
    /// Fraction of rows holding operands when intervals are reserved.
    pub interval_row_fill: f64,
}

impl Default for LayerParams {
    fn default() -> Self {
        LayerParams {
            load_arrays: 1280,
            interval_row_fill: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Calibration {
    pub timing: TimingParams,
    pub energy: EnergyParams,
    pub layer: LayerParams,
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        let t = &self.timing;
        let e = &self.energy;
        let mut all = vec![
            t.t_read,
            t.t_write,
            t.t_carry,
            t.t_load_round,
            t.t_weight_load,
            t.t_compute_unit,
            t.t_reduce,
            t.t_dpu_per_elem,
            e.e_add,
            e.e_load_round,
            e.e_reg_load,
            e.e_reduce,
            e.e_dpu,
            e.e_sa_cycle,
            e.e_cell_write,
            e.e_cell_read,
            self.layer.interval_row_fill,
        ];
        all.extend(t.t_sum.values());
        all.extend(e.power_ratio.values());
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("calibration values must be finite and >= 0".into()));
        }
        if self.layer.load_arrays == 0 || self.layer.interval_row_fill > 1.0 {
            return Err(Error::Parameter("invalid layer parameters".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Calibration> {
        let c: Calibration = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Calibration> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One bit step of a bit-serial scheme.
    pub fn bit_step(&self, s: AddScheme) -> f64 {
        let t = &self.timing;
        let carry_round_trip = match s {
            AddScheme::ParaPim | AddScheme::GraphS => t.t_write + t.t_read,
            _ => 0.0,
        };
        t.t_read + t.t_sum.get(s) + t.t_write + carry_round_trip
    }

    /// Latency of one `n_bits` addition including the write-back.
    pub fn scalar_add_latency(&self, s: AddScheme, n_bits: u32) -> Result<f64> {
        check_bits(n_bits)?;
        let t = &self.timing;
        Ok(match s {
            AddScheme::SttCim => t.t_read + t.t_sum.stt_cim + (n_bits - 1) as f64 * t.t_carry + t.t_write,
            _ => n_bits as f64 * self.bit_step(s),
        })
    }

    /// Latency of adding two `length`-element vectors spread over `cols` columns.
    pub fn vector_add_latency(&self, s: AddScheme, n_bits: u32, length: usize, cols: usize) -> Result<f64> {
        let rounds = vector_rounds(s, n_bits, length, cols)?;
        Ok(self.scalar_add_latency(s, n_bits)? * rounds)
    }

    /// SA critical path of one scalar addition.
    pub fn scalar_critical_path(&self, s: AddScheme, n_bits: u32) -> Result<f64> {
        check_bits(n_bits)?;
        let t = &self.timing;
        Ok(match s {
            AddScheme::SttCim => t.t_sum.stt_cim + (n_bits - 1) as f64 * t.t_carry,
            _ => n_bits as f64 * t.t_sum.get(s),
        })
    }

    pub fn vector_critical_path(&self, s: AddScheme, n_bits: u32, length: usize, cols: usize) -> Result<f64> {
        let rounds = vector_rounds(s, n_bits, length, cols)?;
        Ok(self.scalar_critical_path(s, n_bits)? * rounds)
    }

    /// Dense bit-serial speedup of FAT over ParaPIM.
    pub fn base_addition_speedup(&self) -> f64 {
        self.bit_step(AddScheme::ParaPim) / self.bit_step(AddScheme::Fat)
    }

    /// Closed-form speedup and energy efficiency over ParaPIM at a given
    /// average weight sparsity.
    pub fn sparsity_speedup(&self, sparsity: f64) -> Result<(f64, f64)> {
        if !(0.0..1.0).contains(&sparsity) {
            return Err(Error::Parameter(format!("sparsity {sparsity} outside [0, 1)")));
        }
        let speedup = self.base_addition_speedup() / (1.0 - sparsity);
        let power = self.energy.power_ratio.para_pim / self.energy.power_ratio.fat;
        Ok((speedup, speedup * power))
    }
}

fn check_bits(n_bits: u32) -> Result<()> {
    if n_bits == 0 || n_bits > 64 {
        return Err(Error::Parameter(format!("bit width {n_bits} outside 1..=64")));
    }
    Ok(())
}

/// Sequential repetitions needed for a vector: bit-serial schemes fill one
/// element per column, STT-CiM packs `cols / n_bits` elements per row.
fn vector_rounds(s: AddScheme, n_bits: u32, length: usize, cols: usize) -> Result<f64> {
    check_bits(n_bits)?;
    if length == 0 || cols == 0 {
        return Err(Error::Parameter("vector length and columns must be >= 1".into()));
    }
    Ok(if s.is_bit_serial() {
        length.div_ceil(cols)
    } else {
        (length * n_bits as usize).div_ceil(cols)
    } as f64)
}

/// Event counts of one layer derived from its mapping plan.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerCounts {
    pub x_elems: u64,
    pub x_rounds: u64,
    pub w_elems: u64,
    pub dense_adds: u64,
    pub reduce_ops: u64,
    pub dpu_ops: u64,
    pub compute_units: u64,
    /// Arrays whose worth of activations one replica occupies.
    pub footprint: u64,
    /// Fraction of array rows that hold operands.
    pub row_fill: f64,
}

pub fn analytic_counts(plan: &MappingPlan, hw: &HwConfig, cal: &Calibration) -> LayerCounts {
    let s = &plan.shape;
    let (mh, mw) = (hw.mh() as u64, hw.mw() as u64);
    let (n, kn, i, j) = (s.n as u64, s.kn as u64, s.i() as u64, s.j() as u64);
    let x_elems = plan.x_data_per_load * plan.x_load_times;
    let cs = plan.scheme == Scheme::Img2ColCs;
    let partials = if cs { (2 * j).div_ceil(mh) } else { j.div_ceil(mh) };
    let outputs = n * kn * i;
    LayerCounts {
        x_elems,
        x_rounds: x_elems.div_ceil(cal.layer.load_arrays as u64 * mh * mw),
        w_elems: plan.w_data_per_load * plan.w_load_times,
        dense_adds: outputs * j,
        reduce_ops: outputs * (partials - 1),
        dpu_ops: outputs,
        compute_units: plan.computing_time_units,
        footprint: if cs {
            j.div_ceil(mh) * (n * i).div_ceil(mw) * hw.unroll_l as u64
        } else {
            plan.occupied_cmas
        },
        row_fill: if cs { cal.layer.interval_row_fill } else { 1.0 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub x_load: f64,
    pub w_load: f64,
    pub compute: f64,
    pub reduce: f64,
    pub dpu: f64,
}

impl PhaseBreakdown {
    pub fn total(&self) -> f64 {
        self.x_load + self.w_load + self.compute + self.reduce + self.dpu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerCost {
    /// Nanoseconds per phase.
    pub time: PhaseBreakdown,
    /// Joules per phase.
    pub energy: PhaseBreakdown,
}

impl LayerCost {
    pub fn total_time(&self) -> f64 {
        self.time.total()
    }

    pub fn total_energy(&self) -> f64 {
        self.energy.total()
    }
}

pub fn cost_from_counts(c: &LayerCounts, num_cmas: usize, cal: &Calibration) -> LayerCost {
    let t = &cal.timing;
    let e = &cal.energy;
    let arrays = num_cmas as f64;
    LayerCost {
        time: PhaseBreakdown {
            x_load: c.x_rounds as f64 * t.t_load_round * c.row_fill,
            w_load: c.w_elems as f64 * t.t_weight_load * c.row_fill,
            compute: c.compute_units as f64 * c.footprint as f64 / arrays * t.t_compute_unit,
            reduce: c.reduce_ops as f64 * t.t_reduce / arrays,
            dpu: c.dpu_ops as f64 * t.t_dpu_per_elem,
        },
        energy: PhaseBreakdown {
            x_load: c.x_rounds as f64 * e.e_load_round,
            w_load: c.w_elems as f64 * e.e_reg_load,
            compute: c.dense_adds as f64 * e.e_add,
            reduce: c.reduce_ops as f64 * e.e_reduce,
            dpu: c.dpu_ops as f64 * e.e_dpu,
        },
    }
}

/// Time and energy of a layer under `plan`, scaled to all arrays of `hw`.
pub fn layer_cost(plan: &MappingPlan, hw: &HwConfig, cal: &Calibration) -> LayerCost {
    cost_from_counts(&analytic_counts(plan, hw, cal), hw.num_cmas, cal)
}

/// Share of loaded array cells holding useful operands.
pub fn utilization(plan: &MappingPlan, hw: &HwConfig, cal: &Calibration) -> f64 {
    let s = &plan.shape;
    let fill = |used: usize, unit: usize| used as f64 / (used.div_ceil(unit) * unit) as f64;
    let (mh, mw) = (hw.mh(), hw.mw());
    match plan.scheme {
        Scheme::DirectOs => fill(s.h * s.w, mw) * fill(s.c, mh),
        Scheme::Img2ColOs | Scheme::Img2ColWs => fill(s.i(), mw) * fill(s.j(), mh),
        Scheme::Img2ColIs => fill(s.n * s.i(), mw) * fill(s.j(), mh),
        Scheme::Img2ColCs => fill(s.n * s.i(), mw) * fill(s.j(), mh) * cal.layer.interval_row_fill,
    }
}

/// Writes to the hottest accumulator cell per dot product of one column
/// block. Fixed-row schemes rewrite one accumulator for every operand;
/// reserved intervals give every fold step its own operand-height slot.
pub fn max_cell_writes_per_dot(scheme: Scheme, hw: &HwConfig) -> u64 {
    let mh = hw.mh() as u64;
    match scheme {
        Scheme::Img2ColCs => {
            let slots = mh - hw.mh_eff() as u64;
            (hw.mh_eff() as u64).div_ceil(slots)
        }
        _ => mh,
    }
}

/// Energy of the events in a functional ledger.
pub fn ledger_energy(l: &CostLedger, cal: &Calibration) -> f64 {
    let e = &cal.energy;
    l.sa_cycles as f64 * e.e_sa_cycle
        + l.cell_writes as f64 * e.e_cell_write
        + l.cell_reads as f64 * e.e_cell_read
        + l.reg_loads as f64 * e.e_reg_load
        + l.reduce_ops as f64 * e.e_reduce
        + l.dpu_ops as f64 * e.e_dpu
        + l.load_rounds as f64 * e.e_load_round
}

/// Time of a ledger if all its row activations ran back to back on one array.
pub fn ledger_serial_time(l: &CostLedger, cal: &Calibration) -> f64 {
    let t = &cal.timing;
    l.row_activations as f64 * cal.bit_step(AddScheme::Fat)
        + l.reduce_ops as f64 * t.t_reduce
        + l.dpu_ops as f64 * t.t_dpu_per_elem
        + l.load_rounds as f64 * t.t_load_round
}

/// Speedup and energy efficiency over a dense ParaPIM fold, measured by
/// running one `j`-long dot product at the given sparsity on a simulated array.
pub fn simulate_sparsity(cal: &Calibration, sparsity: f64, j: usize, seed: u64) -> Result<(f64, f64)> {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    if !(0.0..1.0).contains(&sparsity) || j == 0 {
        return Err(Error::Parameter(format!("sparsity {sparsity} outside [0, 1) or empty vector")));
    }
    let hw = HwConfig {
        geometry: crate::memory_array::CmaGeometry {
            cols: 64,
            ..Default::default()
        },
        weight_regs: j,
        ..Default::default()
    };
    let layout = crate::mapping::fixed_layout(j, &hw)?;
    let g = hw.geometry;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let nonzero = ((1.0 - sparsity) * j as f64).round() as usize;
    let plus = nonzero.div_ceil(2);
    let mut w: Vec<i64> = (0..j)
        .map(|k| if k < plus { 1 } else if k < nonzero { -1 } else { 0 })
        .collect();
    w.shuffle(&mut rng);

    let mut cma = Cma::new(g)?;
    let mut acts = vec![vec![0i64; j]; g.cols];
    for (c, col) in acts.iter_mut().enumerate() {
        for (k, v) in col.iter_mut().enumerate() {
            *v = rng.gen_range(0..256);
            cma.write_operand(OperandSlot::unsigned(c, layout.operands[k].base_row, g.operand_bits), *v)?;
        }
    }
    cma.take_ledger();
    let mut sacu = Sacu::new(AccumulatorPool::new(layout.positions.clone(), AccPolicy::Fixed)?);
    sacu.regs = crate::sparse_control::WeightRegisterFile::with_capacity(j);
    sacu.load_weights(&mut cma, &w)?;
    let out = sacu.dot_product(&mut cma, &layout.operands, &ColumnMask::all(g.cols))?;
    for (c, col) in acts.iter().enumerate() {
        let want: i64 = w.iter().zip(col).map(|(a, b)| a * b).sum();
        let got = cma.peek_operand(OperandSlot::signed(c, out.result.base_row, g.acc_bits));
        if got != want {
            return Err(Error::Invariant(format!("column {c}: dot product {got} != {want}")));
        }
    }

    let fat_time = cma.ledger().row_activations as f64 * cal.bit_step(AddScheme::Fat);
    let dense_time = (j * g.acc_bits as usize) as f64 * cal.bit_step(AddScheme::ParaPim);
    let p = &cal.energy.power_ratio;
    let speedup = dense_time / fat_time;
    let energy_eff = (dense_time * p.para_pim) / (fat_time * p.fat);
    Ok((speedup, energy_eff))
}
