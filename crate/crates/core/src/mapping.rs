//! Img2Col lowering, mapping schemes, grid schedules and interval layouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::WearLedger;
use crate::memory_array::{CmaGeometry, RowSpan};
use crate::sparse_control::DEFAULT_WEIGHT_REGS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kn: usize,
    pub kh: usize,
    pub kw: usize,
    pub s: usize,
    #[serde(default)]
    pub p: usize,
}

impl ConvShape {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.n, self.c, self.h, self.w, self.kn, self.kh, self.kw, self.s];
        if dims.contains(&0) {
            return Err(Error::Shape(format!("all dimensions must be >= 1: {self:?}")));
        }
        for (len, k) in [(self.h, self.kh), (self.w, self.kw)] {
            if len + 2 * self.p < k {
                return Err(Error::Shape(format!(
                    "kernel {k} is larger than the padded input {}",
                    len + 2 * self.p
                )));
            }
            if self.p >= k {
                return Err(Error::Shape(format!("padding {} must be smaller than kernel {k}", self.p)));
            }
        }
        Ok(())
    }

    /// Output rows; a trailing partial window is dropped.
    pub fn oh(&self) -> usize {
        (self.h + 2 * self.p - self.kh) / self.s + 1
    }

    pub fn ow(&self) -> usize {
        (self.w + 2 * self.p - self.kw) / self.s + 1
    }

    /// Output positions per image.
    pub fn i(&self) -> usize {
        self.oh() * self.ow()
    }

    /// Dot-product length.
    pub fn j(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn input_len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn weight_len(&self) -> usize {
        self.kn * self.j()
    }

    /// Input element gathered into Img2Col column `q` (over `n*i`), row `r`;
    /// `None` inside the zero padding.
    pub fn gather_index(&self, q: usize, r: usize) -> Option<usize> {
        let (b, pos) = (q / self.i(), q % self.i());
        let (oy, ox) = (pos / self.ow(), pos % self.ow());
        let ch = r / (self.kh * self.kw);
        let (ky, kx) = ((r / self.kw) % self.kh, r % self.kw);
        let y = (oy * self.s + ky).checked_sub(self.p)?;
        let x = (ox * self.s + kx).checked_sub(self.p)?;
        if y >= self.h || x >= self.w {
            return None;
        }
        Some(((b * self.c + ch) * self.h + y) * self.w + x)
    }
}

/// Activation matrix of a convolution: `n*i` columns, `j` rows, stored column by column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Img2ColLayout<T> {
    pub shape: ConvShape,
    pub i: usize,
    pub j: usize,
    pub ax: Vec<T>,
}

impl<T: Copy> Img2ColLayout<T> {
    pub fn cols(&self) -> usize {
        self.shape.n * self.i
    }

    pub fn get(&self, col: usize, row: usize) -> T {
        self.ax[col * self.j + row]
    }

    pub fn column(&self, col: usize) -> &[T] {
        &self.ax[col * self.j..(col + 1) * self.j]
    }
}

/// Gathers an NCHW tensor into its Img2Col matrix; padding reads as `T::default()`.
pub fn img2col<T: Copy + Default>(x: &[T], shape: &ConvShape) -> Result<Img2ColLayout<T>> {
    shape.validate()?;
    if x.len() != shape.input_len() {
        return Err(Error::Shape(format!(
            "input has {} elements, shape needs {}",
            x.len(),
            shape.input_len()
        )));
    }
    let (i, j) = (shape.i(), shape.j());
    let mut ax = Vec::with_capacity(shape.n * i * j);
    for q in 0..shape.n * i {
        for r in 0..j {
            ax.push(shape.gather_index(q, r).map_or_else(T::default, |k| x[k]));
        }
    }
    Ok(Img2ColLayout { shape: *shape, i, j, ax })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HwConfig {
    pub num_cmas: usize,
    pub geometry: CmaGeometry,
    pub weight_regs: usize,
    pub unroll_l: usize,
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig {
            num_cmas: 4096,
            geometry: CmaGeometry::default(),
            weight_regs: DEFAULT_WEIGHT_REGS,
            unroll_l: 1,
        }
    }
}

impl HwConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.num_cmas == 0 || self.weight_regs == 0 || self.unroll_l == 0 {
            return Err(Error::Hardware(
                "num_cmas, weight_regs and unroll_l must be >= 1".into(),
            ));
        }
        if self.mh() < 2 {
            return Err(Error::Hardware("array must hold at least 2 operands per column".into()));
        }
        Ok(())
    }

    pub fn mw(&self) -> usize {
        self.geometry.cols
    }

    pub fn mh(&self) -> usize {
        self.geometry.operands_per_column()
    }

    /// Operands per column when half the rows are reserved intervals.
    pub fn mh_eff(&self) -> usize {
        self.mh() / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "direct-os")]
    DirectOs,
    #[serde(rename = "img2col-os")]
    Img2ColOs,
    #[serde(rename = "img2col-is")]
    Img2ColIs,
    #[serde(rename = "img2col-ws")]
    Img2ColWs,
    #[serde(rename = "img2col-cs")]
    Img2ColCs,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::DirectOs,
        Scheme::Img2ColOs,
        Scheme::Img2ColIs,
        Scheme::Img2ColWs,
        Scheme::Img2ColCs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::DirectOs => "Direct-OS",
            Scheme::Img2ColOs => "Img2Col-OS",
            Scheme::Img2ColIs => "Img2Col-IS",
            Scheme::Img2ColWs => "Img2Col-WS",
            Scheme::Img2ColCs => "Img2Col-CS",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Ok(match key.as_str() {
            "direct-os" | "dos" => Scheme::DirectOs,
            "img2col-os" | "os" => Scheme::Img2ColOs,
            "img2col-is" | "is" => Scheme::Img2ColIs,
            "img2col-ws" | "ws" => Scheme::Img2ColWs,
            "img2col-cs" | "cs" => Scheme::Img2ColCs,
            _ => return Err(Error::Parameter(format!("unknown mapping scheme '{s}'"))),
        })
    }

    /// Whether activations are loaded once per layer rather than per filter.
    pub fn loads_once(self) -> bool {
        matches!(self, Scheme::Img2ColIs | Scheme::Img2ColCs)
    }
}

/// One activation sub-array resident on one array during one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridStep {
    pub step: usize,
    pub cma: usize,
    pub j_block: usize,
    pub col_block: usize,
    /// Filters computed against this sub-array while it is resident.
    pub filters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub scheme: Scheme,
    pub shape: ConvShape,
    pub x_data_per_load: u64,
    pub x_load_times: u64,
    pub w_data_per_load: u64,
    pub w_load_times: u64,
    pub parallel_cols: u64,
    pub occupied_cmas: u64,
    pub computing_time_units: u64,
    /// Operand rows per column of one sub-array in the functional layout.
    pub block_rows: usize,
    pub schedule: Vec<GridStep>,
}

impl MappingPlan {
    pub fn steps(&self) -> usize {
        self.schedule.iter().map(|g| g.step + 1).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn cdiv(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Operand rows per column of one sub-array when executed functionally.
pub fn functional_block_rows(scheme: Scheme, hw: &HwConfig) -> usize {
    let g = hw.geometry;
    match scheme {
        Scheme::Img2ColCs => hw.mh_eff().min(hw.weight_regs),
        _ => {
            let free = g.rows.saturating_sub(3 * g.acc_bits as usize) / g.operand_bits as usize;
            hw.mh().min(hw.weight_regs).min(free)
        }
    }
}

/// Closed-form load, parallelism, occupancy and time counts plus the grid schedule.
pub fn plan(scheme: Scheme, shape: &ConvShape, hw: &HwConfig) -> Result<MappingPlan> {
    shape.validate()?;
    hw.validate()?;
    let (n, c, h, w) = (shape.n as u64, shape.c as u64, shape.h as u64, shape.w as u64);
    let (kn, kh, kw, s) = (shape.kn as u64, shape.kh as u64, shape.kw as u64, shape.s as u64);
    let (i, j) = (shape.i() as u64, shape.j() as u64);
    let (mh, mw, l) = (hw.mh() as u64, hw.mw() as u64, hw.unroll_l as u64);
    if j > (hw.num_cmas * hw.weight_regs) as u64 {
        return Err(Error::Unsupported(format!(
            "J = {j} exceeds the {} weight registers of the device",
            hw.num_cmas * hw.weight_regs
        )));
    }
    let (jb, ib, nib) = (cdiv(j, mh), cdiv(i, mw), cdiv(n * i, mw));
    let (xd, xt, wd, wt, par, occ, time) = match scheme {
        Scheme::DirectOs => {
            let (cb, hb) = (cdiv(c, mh), cdiv(h * w, mw));
            (
                kn * n * mh * mw,
                cb * hb,
                kn * n * mh,
                cb * kh * hb * kw,
                cdiv(mw, s).min(cdiv(h * w, s)),
                kn * n,
                cb * hb * kh * kw * (mh + cb),
            )
        }
        Scheme::Img2ColOs => (kn * n * mh * mw, jb * ib, kn * n * mh, jb * ib, mw.min(i), kn * n, jb * ib * (mh + jb)),
        Scheme::Img2ColIs => (n * i * j, 1, nib * j, kn, mw.min(n * i), jb * nib, kn * (mh + jb)),
        Scheme::Img2ColWs => (kn * j * mw, n * ib, kn * j, 1, mw.min(i), jb * kn, n * ib * (mh + jb)),
        Scheme::Img2ColCs => {
            let jb2 = cdiv(2 * j, mh);
            (
                l * n * i * j,
                1,
                l * nib * j,
                cdiv(kn, l),
                mw.min(n * i),
                jb2 * nib * l,
                cdiv(kn * (mh / 2 + jb2), l),
            )
        }
    };
    let block_rows = functional_block_rows(scheme, hw);
    let schedule = functional_schedule(scheme, shape, hw, block_rows);
    Ok(MappingPlan {
        scheme,
        shape: *shape,
        x_data_per_load: xd,
        x_load_times: xt,
        w_data_per_load: wd,
        w_load_times: wt,
        parallel_cols: par,
        occupied_cmas: occ,
        computing_time_units: time,
        block_rows,
        schedule,
    })
}

fn functional_schedule(scheme: Scheme, shape: &ConvShape, hw: &HwConfig, block_rows: usize) -> Vec<GridStep> {
    let j_blocks = shape.j().div_ceil(block_rows);
    let col_blocks = (shape.n * shape.i()).div_ceil(hw.mw());
    match scheme {
        Scheme::DirectOs => Vec::new(),
        Scheme::Img2ColIs => grid_schedule(j_blocks, col_blocks, shape.kn, 1, hw.num_cmas),
        Scheme::Img2ColCs => grid_schedule(j_blocks, col_blocks, shape.kn, hw.unroll_l, hw.num_cmas),
        // Activations are reloaded for every filter.
        Scheme::Img2ColOs | Scheme::Img2ColWs => {
            let one = grid_schedule(j_blocks, col_blocks, 1, 1, hw.num_cmas);
            let steps = one.last().map_or(0, |g| g.step + 1);
            (0..shape.kn)
                .flat_map(|f| {
                    one.iter().cloned().map(move |mut g| {
                        g.step += f * steps;
                        g.filters = vec![f];
                        g
                    })
                })
                .collect()
        }
    }
}

/// Assigns `j_blocks x col_blocks` sub-arrays, replicated `replicas` times
/// across filters, to `num_cmas` arrays. J blocks are visited first so that
/// partial sums of one column block finish together.
pub fn grid_schedule(j_blocks: usize, col_blocks: usize, kn: usize, replicas: usize, num_cmas: usize) -> Vec<GridStep> {
    let mut out = Vec::with_capacity(j_blocks * col_blocks * replicas);
    let mut k = 0;
    for rep in 0..replicas {
        for cb in 0..col_blocks {
            for jb in 0..j_blocks {
                out.push(GridStep {
                    step: k / num_cmas,
                    cma: k % num_cmas,
                    j_block: jb,
                    col_block: cb,
                    filters: (rep..kn).step_by(replicas).collect(),
                });
                k += 1;
            }
        }
    }
    out
}

/// Combined-stationary grid schedule.
pub fn cs_schedule(shape: &ConvShape, hw: &HwConfig) -> Result<Vec<GridStep>> {
    Ok(plan(Scheme::Img2ColCs, shape, hw)?.schedule)
}

/// Row assignment of one column: operand slots plus accumulator positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub operands: Vec<RowSpan>,
    /// Operand-height interval slots reserved for partial sums.
    pub interval_slots: Vec<RowSpan>,
    /// Accumulator positions, each pairing adjacent interval slots.
    pub positions: Vec<RowSpan>,
}

impl ColumnLayout {
    pub fn interval_rows(&self) -> Vec<usize> {
        self.interval_slots.iter().flat_map(|s| s.rows()).collect()
    }
}

/// Interleaves operands with reserved intervals in groups of
/// `[operand, operand, interval, interval]`, so each pair of intervals holds
/// one accumulator.
pub fn layout_with_intervals(sub_array_rows: usize, hw: &HwConfig) -> Result<ColumnLayout> {
    hw.validate()?;
    let g = hw.geometry;
    let ob = g.operand_bits as usize;
    if sub_array_rows > hw.mh_eff() {
        return Err(Error::Layout(format!(
            "sub-array of {sub_array_rows} operands exceeds {} rows available with intervals",
            hw.mh_eff()
        )));
    }
    let per_acc = (g.acc_bits as usize).div_ceil(ob);
    let group = 2 * per_acc;
    let mut layout = ColumnLayout {
        operands: Vec::new(),
        interval_slots: Vec::new(),
        positions: Vec::new(),
    };
    for slot in 0..hw.mh() {
        let span = RowSpan::new(slot * ob, g.operand_bits);
        if slot % group < per_acc {
            layout.operands.push(span);
        } else {
            layout.interval_slots.push(span);
            if slot % group == per_acc {
                layout.positions.push(RowSpan::new(slot * ob, g.acc_bits));
            }
        }
    }
    if layout.positions.len() < 3 {
        return Err(Error::Hardware("too few reserved intervals for three accumulators".into()));
    }
    layout.operands.truncate(sub_array_rows);
    Ok(layout)
}

/// Contiguous operands with three fixed accumulators at the bottom of the array.
pub fn fixed_layout(sub_array_rows: usize, hw: &HwConfig) -> Result<ColumnLayout> {
    hw.validate()?;
    let g = hw.geometry;
    let acc = g.acc_bits as usize;
    let top = g.rows - 3 * acc;
    if sub_array_rows * g.operand_bits as usize > top {
        return Err(Error::Layout(format!(
            "{sub_array_rows} operands do not fit above the accumulators"
        )));
    }
    Ok(ColumnLayout {
        operands: (0..sub_array_rows)
            .map(|k| RowSpan::new(k * g.operand_bits as usize, g.operand_bits))
            .collect(),
        interval_slots: Vec::new(),
        positions: (0..3).map(|k| RowSpan::new(top + k * acc, g.acc_bits)).collect(),
    })
}

/// Ratio of the hottest cell of `baseline` to that of `leveled`.
pub fn wear_report(leveled: &WearLedger, baseline: &WearLedger) -> Result<f64> {
    if leveled.is_empty() || baseline.is_empty() {
        return Err(Error::Parameter("wear ledgers must record at least one write".into()));
    }
    Ok(baseline.max_single_cell() as f64 / leveled.max_single_cell() as f64)
}
