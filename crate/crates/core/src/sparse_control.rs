//! Sparse addition control: ternary weight registers, the zero-skipping dot
//! product and the cross-array reduction unit.
//!
//! A dot product runs in three stages. Rows with weight +1 are folded into a
//! partial sum P, rows with weight -1 into M, and the result is P - M. Rows
//! with weight 0 are never activated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::CostLedger;
use crate::memory_array::{Cma, ColumnMask, RowSpan};

/// Default number of 2-bit weight registers per array.
pub const DEFAULT_WEIGHT_REGS: usize = 32;

/// 2-bit ternary weight code `(sign, data)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TernaryWeightCode {
    sign: bool,
    data: bool,
}

impl TernaryWeightCode {
    pub const PLUS: TernaryWeightCode = TernaryWeightCode { sign: false, data: true };
    pub const ZERO: TernaryWeightCode = TernaryWeightCode { sign: false, data: false };
    pub const MINUS: TernaryWeightCode = TernaryWeightCode { sign: true, data: true };

    /// Builds a code from raw register bits; `(1, 0)` is illegal.
    pub fn from_bits(sign: bool, data: bool) -> Result<Self> {
        if sign && !data {
            return Err(Error::IllegalWeight("code (1,0) is not a ternary weight".into()));
        }
        Ok(TernaryWeightCode { sign, data })
    }

    pub fn sign(self) -> bool {
        self.sign
    }

    pub fn data(self) -> bool {
        self.data
    }

    /// Whether the operand row is activated at all.
    pub fn activates(self) -> bool {
        self.data
    }

    pub fn value(self) -> i8 {
        match (self.sign, self.data) {
            (_, false) => 0,
            (false, true) => 1,
            (true, true) => -1,
        }
    }
}

pub fn encode_weight(w: i64) -> Result<TernaryWeightCode> {
    match w {
        1 => Ok(TernaryWeightCode::PLUS),
        0 => Ok(TernaryWeightCode::ZERO),
        -1 => Ok(TernaryWeightCode::MINUS),
        _ => Err(Error::IllegalWeight(format!("{w} is not in {{-1, 0, +1}}"))),
    }
}

/// Binary weights reuse the ternary registers and never produce the zero code.
pub fn extend_binary_weight(w: i64) -> Result<TernaryWeightCode> {
    match w {
        1 | -1 => encode_weight(w),
        _ => Err(Error::IllegalWeight(format!("{w} is not a binary weight"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRegisterFile {
    codes: Vec<TernaryWeightCode>,
    capacity: usize,
}

impl Default for WeightRegisterFile {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_WEIGHT_REGS)
    }
}

impl WeightRegisterFile {
    pub fn with_capacity(capacity: usize) -> Self {
        WeightRegisterFile {
            codes: Vec::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn codes(&self) -> &[TernaryWeightCode] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Replaces the register contents; returns the number of register writes.
    pub fn load_codes(&mut self, codes: &[TernaryWeightCode]) -> Result<u64> {
        if codes.len() > self.capacity {
            return Err(Error::LengthMismatch(format!(
                "{} weights exceed {} registers",
                codes.len(),
                self.capacity
            )));
        }
        self.codes = codes.to_vec();
        Ok(codes.len() as u64)
    }

    pub fn load_ternary(&mut self, weights: &[i64]) -> Result<u64> {
        let codes = weights.iter().map(|&w| encode_weight(w)).collect::<Result<Vec<_>>>()?;
        self.load_codes(&codes)
    }

    pub fn load_binary(&mut self, weights: &[i64]) -> Result<u64> {
        let codes = weights
            .iter()
            .map(|&w| extend_binary_weight(w))
            .collect::<Result<Vec<_>>>()?;
        self.load_codes(&codes)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotProductStats {
    /// Operand rows activated (one per nonzero weight).
    pub row_activations: u64,
    pub add_passes: u64,
    pub sub_passes: u64,
    pub copy_passes: u64,
    pub skipped_rows: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassOp {
    Copy,
    Add,
    Sub,
    Zero,
}

/// One pass of the dot product, as seen by the row decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: u8,
    pub op: PassOp,
    /// Indices of the operands whose rows this pass activates.
    pub operands: Vec<usize>,
    /// Base rows of every source span read by the pass.
    pub rows: Vec<usize>,
    pub dest_row: usize,
}

pub fn trace_to_json_lines(trace: &[TraceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// How accumulator positions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccPolicy {
    /// Accumulate in place at the same positions for every dot product.
    Fixed,
    /// Every pass writes the next free position; the cursor carries over
    /// between dot products.
    Rotating,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulatorPool {
    positions: Vec<RowSpan>,
    policy: AccPolicy,
    cursor: usize,
}

impl AccumulatorPool {
    pub fn new(positions: Vec<RowSpan>, policy: AccPolicy) -> Result<Self> {
        if positions.len() < 3 {
            return Err(Error::Layout(format!(
                "need at least 3 accumulator positions, got {}",
                positions.len()
            )));
        }
        for (i, a) in positions.iter().enumerate() {
            for b in &positions[i + 1..] {
                if spans_intersect(a, b) {
                    return Err(Error::Layout("accumulator positions overlap".into()));
                }
            }
        }
        Ok(AccumulatorPool {
            positions,
            policy,
            cursor: 0,
        })
    }

    pub fn positions(&self) -> &[RowSpan] {
        &self.positions
    }

    pub fn policy(&self) -> AccPolicy {
        self.policy
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    fn begin(&mut self) {
        if self.policy == AccPolicy::Fixed {
            self.cursor = 0;
        }
    }

    /// Position for a pass whose running sum currently sits at `current`.
    fn dest(&mut self, current: Option<usize>, live: &[usize]) -> usize {
        if let (AccPolicy::Fixed, Some(c)) = (self.policy, current) {
            return c;
        }
        let n = self.positions.len();
        for k in 0..n {
            let i = (self.cursor + k) % n;
            if !live.contains(&i) && Some(i) != current {
                self.cursor = (i + 1) % n;
                return i;
            }
        }
        unreachable!("pool holds at least 3 positions and at most 3 are live")
    }
}

fn spans_intersect(a: &RowSpan, b: &RowSpan) -> bool {
    let (ra, rb) = (a.rows(), b.rows());
    ra.start < rb.end && rb.start < ra.end
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotOutcome {
    /// Two's-complement result, `acc_bits` wide, in every enabled column.
    pub result: RowSpan,
    pub stats: DotProductStats,
    pub trace: Vec<TraceRecord>,
}

/// Controller of one array: weight registers plus accumulator placement.
#[derive(Debug, Clone)]
pub struct Sacu {
    pub regs: WeightRegisterFile,
    pub pool: AccumulatorPool,
}

impl Sacu {
    pub fn new(pool: AccumulatorPool) -> Self {
        Sacu {
            regs: WeightRegisterFile::default(),
            pool,
        }
    }

    /// Loads ternary weights and charges the register writes to `cma`.
    pub fn load_weights(&mut self, cma: &mut Cma, weights: &[i64]) -> Result<()> {
        let codes = weights.iter().map(|&w| encode_weight(w)).collect::<Result<Vec<_>>>()?;
        self.load_codes(cma, &codes)
    }

    pub fn load_codes(&mut self, cma: &mut Cma, codes: &[TernaryWeightCode]) -> Result<()> {
        let n = self.regs.load_codes(codes)?;
        cma.charge(CostLedger {
            reg_loads: n,
            ..Default::default()
        });
        Ok(())
    }

    /// Sparse dot product of the loaded weights with `operands` (one unsigned
    /// operand family per weight) in every column of `mask`.
    pub fn dot_product(&mut self, cma: &mut Cma, operands: &[RowSpan], mask: &ColumnMask) -> Result<DotOutcome> {
        let codes = self.regs.codes().to_vec();
        if codes.len() != operands.len() {
            return Err(Error::LengthMismatch(format!(
                "{} weights for {} operands",
                codes.len(),
                operands.len()
            )));
        }
        let geom = cma.geometry();
        for op in operands {
            if op.bits != geom.operand_bits {
                return Err(Error::Layout(format!(
                    "operand at row {} is {} bits, array operands are {}",
                    op.base_row, op.bits, geom.operand_bits
                )));
            }
            if self.pool.positions.iter().any(|p| spans_intersect(p, op)) {
                return Err(Error::Layout(format!(
                    "operand at row {} overlaps an accumulator position",
                    op.base_row
                )));
            }
        }
        if let Some(p) = self.pool.positions.iter().find(|p| p.bits != geom.acc_bits) {
            return Err(Error::Layout(format!(
                "accumulator at row {} is {} bits, expected {}",
                p.base_row, p.bits, geom.acc_bits
            )));
        }

        self.pool.begin();
        let mut run = Run {
            cma,
            pool: &mut self.pool,
            mask,
            width: geom.acc_bits,
            stats: DotProductStats::default(),
            trace: Vec::new(),
        };
        let plus: Vec<usize> = (0..codes.len()).filter(|&i| codes[i] == TernaryWeightCode::PLUS).collect();
        let minus: Vec<usize> = (0..codes.len()).filter(|&i| codes[i] == TernaryWeightCode::MINUS).collect();
        run.stats.skipped_rows = codes.iter().filter(|c| !c.activates()).count() as u64;

        let p_acc = run.fold(1, &plus, operands, &[])?;
        let m_acc = run.fold(2, &minus, operands, p_acc.as_slice())?;
        let result = match (p_acc, m_acc) {
            (Some(p), None) => p,
            (p, Some(m)) => run.subtract(p, m)?,
            (None, None) => run.zero()?,
        };
        let positions = run.pool.positions.clone();
        Ok(DotOutcome {
            result: positions[result],
            stats: run.stats,
            trace: run.trace,
        })
    }
}

struct Run<'a> {
    cma: &'a mut Cma,
    pool: &'a mut AccumulatorPool,
    mask: &'a ColumnMask,
    width: u32,
    stats: DotProductStats,
    trace: Vec<TraceRecord>,
}

impl Run<'_> {
    fn pos(&self, i: usize) -> RowSpan {
        self.pool.positions[i]
    }

    /// Left fold of the selected operands; returns the accumulator position.
    fn fold(&mut self, stage: u8, idx: &[usize], ops: &[RowSpan], live: &[usize]) -> Result<Option<usize>> {
        let Some(&first) = idx.first() else {
            return Ok(None);
        };
        self.stats.row_activations += idx.len() as u64;
        let mut acc;
        if idx.len() == 1 {
            acc = self.pool.dest(None, live);
            self.cma.copy_operand(ops[first], self.pos(acc), self.width, self.mask)?;
            self.stats.copy_passes += 1;
            self.record(stage, PassOp::Copy, vec![first], vec![ops[first].base_row], acc);
            return Ok(Some(acc));
        }
        let second = idx[1];
        acc = self.pool.dest(None, live);
        self.cma.vector_add(ops[first], ops[second], self.pos(acc), self.width, self.mask)?;
        self.stats.add_passes += 1;
        self.record(
            stage,
            PassOp::Add,
            vec![first, second],
            vec![ops[first].base_row, ops[second].base_row],
            acc,
        );
        for &k in &idx[2..] {
            let next = self.pool.dest(Some(acc), live);
            self.cma.vector_add(self.pos(acc), ops[k], self.pos(next), self.width, self.mask)?;
            self.stats.add_passes += 1;
            self.record(stage, PassOp::Add, vec![k], vec![self.pos(acc).base_row, ops[k].base_row], next);
            acc = next;
        }
        Ok(Some(acc))
    }

    /// P - M (or 0 - M when P is absent) as NOT M into a scratch position then
    /// an addition with carry-in 1.
    fn subtract(&mut self, p: Option<usize>, m: usize) -> Result<usize> {
        let mut live = vec![m];
        live.extend(p);
        let scratch = self.pool.dest(None, &live);
        let dest = match self.pool.policy {
            AccPolicy::Fixed => p.unwrap_or(m),
            AccPolicy::Rotating => {
                let mut busy = vec![scratch];
                busy.extend(p);
                self.pool.dest(None, &busy)
            }
        };
        let a = p.map(|i| self.pos(i)).unwrap_or(RowSpan::ZERO);
        let (b, s, d) = (self.pos(m), self.pos(scratch), self.pos(dest));
        self.cma.vector_sub(a, b, d, s, self.width, self.mask)?;
        self.stats.sub_passes += 1;
        let mut rows = vec![b.base_row];
        rows.extend(p.map(|i| self.pos(i).base_row));
        self.record(3, PassOp::Sub, Vec::new(), rows, dest);
        Ok(dest)
    }

    fn zero(&mut self) -> Result<usize> {
        let dest = self.pool.dest(None, &[]);
        self.cma.write_zero(self.pos(dest), self.width, self.mask)?;
        self.stats.copy_passes += 1;
        self.record(3, PassOp::Zero, Vec::new(), Vec::new(), dest);
        Ok(dest)
    }

    fn record(&mut self, stage: u8, op: PassOp, operands: Vec<usize>, rows: Vec<usize>, dest: usize) {
        let dest_row = self.pos(dest).base_row;
        self.trace.push(TraceRecord {
            stage,
            op,
            operands,
            rows,
            dest_row,
        });
    }
}

/// Sums aligned partial results of several arrays in ascending index order.
pub fn reduce_across_cmas(partials: &[i64], ledger: &mut CostLedger) -> i64 {
    ledger.reduce_ops += partials.len().saturating_sub(1) as u64;
    partials.iter().sum()
}
