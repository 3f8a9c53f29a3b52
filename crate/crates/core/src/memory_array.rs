//! One computing memory array (CMA).
//!
//! Operands are stored column-major: bit `i` of a value lives in row
//! `base_row + i`, LSB first. Two constant rows (all ones, all zeros) sit
//! after the data rows and are never writable; they feed NOT, NAND and
//! zero-extension of narrow operands.
//!
//! Vector operations run bit-serially over every enabled column at once. The
//! carry of each column stays in its sense amplifier latch, so a `width`-bit
//! addition costs `width` row-pair activations and `width` cell writes per
//! column with no carry traffic to the cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{CellWear, CostLedger};
use crate::sa_logic::{lanes, Port, SaConfig, SaOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmaGeometry {
    pub rows: usize,
    pub cols: usize,
    pub operand_bits: u32,
    pub acc_bits: u32,
}

impl Default for CmaGeometry {
    fn default() -> Self {
        CmaGeometry {
            rows: 512,
            cols: 256,
            operand_bits: 8,
            acc_bits: 16,
        }
    }
}

impl CmaGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Hardware("array must have rows and columns".into()));
        }
        if self.operand_bits == 0 || self.operand_bits > self.acc_bits || self.acc_bits > 63 {
            return Err(Error::Hardware(format!(
                "need 0 < operand_bits ({}) <= acc_bits ({}) <= 63",
                self.operand_bits, self.acc_bits
            )));
        }
        if self.rows < self.acc_bits as usize {
            return Err(Error::Hardware("array shorter than one accumulator".into()));
        }
        Ok(())
    }

    /// Index of the all-ones row.
    pub fn ones_row(&self) -> usize {
        self.rows
    }

    /// Index of the all-zeros row.
    pub fn zeros_row(&self) -> usize {
        self.rows + 1
    }

    pub fn physical_rows(&self) -> usize {
        self.rows + 2
    }

    /// Operands of `operand_bits` that fit in one column.
    pub fn operands_per_column(&self) -> usize {
        self.rows / self.operand_bits as usize
    }

    fn words_per_row(&self) -> usize {
        self.cols.div_ceil(64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signedness {
    Unsigned,
    TwosComplement,
}

impl Signedness {
    fn name(self) -> &'static str {
        match self {
            Signedness::Unsigned => "unsigned",
            Signedness::TwosComplement => "two's-complement",
        }
    }

    pub fn range(self, bits: u32) -> (i64, i64) {
        match self {
            Signedness::Unsigned => (0, (1i64 << bits) - 1),
            Signedness::TwosComplement => (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1),
        }
    }
}

/// One value in one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandSlot {
    pub col: usize,
    pub base_row: usize,
    pub bits: u32,
    pub signedness: Signedness,
}

impl OperandSlot {
    pub fn unsigned(col: usize, base_row: usize, bits: u32) -> Self {
        OperandSlot {
            col,
            base_row,
            bits,
            signedness: Signedness::Unsigned,
        }
    }

    pub fn signed(col: usize, base_row: usize, bits: u32) -> Self {
        OperandSlot {
            col,
            base_row,
            bits,
            signedness: Signedness::TwosComplement,
        }
    }

    pub fn span(&self) -> RowSpan {
        RowSpan::new(self.base_row, self.bits)
    }
}

/// The rows an aligned family of operands occupies in every enabled column.
///
/// Bits at or above `bits` read as zero (the zeros row is addressed instead).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowSpan {
    pub base_row: usize,
    pub bits: u32,
}

impl RowSpan {
    /// A span that reads as zero at every bit.
    pub const ZERO: RowSpan = RowSpan { base_row: 0, bits: 0 };

    pub fn new(base_row: usize, bits: u32) -> Self {
        RowSpan { base_row, bits }
    }

    /// Builds the family from per-column slots, which must share rows and width.
    pub fn from_slots(slots: &[OperandSlot]) -> Result<RowSpan> {
        let first = slots
            .first()
            .ok_or_else(|| Error::Layout("empty operand family".into()))?;
        if slots
            .iter()
            .any(|s| s.base_row != first.base_row || s.bits != first.bits)
        {
            return Err(Error::Layout(
                "operand family is not aligned across columns".into(),
            ));
        }
        Ok(first.span())
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.base_row..self.base_row + self.bits as usize
    }

    /// Partial overlap of the rows touched by a `width`-bit pass. Spans with the
    /// same base row alias bit for bit, which bit-serial passes tolerate.
    fn overlaps(&self, other: &RowSpan, width: u32) -> bool {
        if self.base_row == other.base_row {
            return false;
        }
        let a = self.base_row..self.base_row + self.bits.min(width) as usize;
        let b = other.base_row..other.base_row + other.bits.min(width) as usize;
        a.start < b.end && b.start < a.end
    }
}

/// Set of enabled columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMask {
    cols: usize,
    words: Vec<u64>,
}

impl ColumnMask {
    pub fn none(cols: usize) -> Self {
        ColumnMask {
            cols,
            words: vec![0; cols.div_ceil(64)],
        }
    }

    pub fn all(cols: usize) -> Self {
        Self::first(cols, cols)
    }

    /// Columns `0..n`.
    pub fn first(cols: usize, n: usize) -> Self {
        let mut m = Self::none(cols);
        for c in 0..n.min(cols) {
            m.words[c / 64] |= 1 << (c % 64);
        }
        m
    }

    pub fn from_indices(cols: usize, idx: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut m = Self::none(cols);
        for c in idx {
            if c >= cols {
                return Err(Error::SlotOutOfRange(format!("column {c} >= {cols}")));
            }
            m.words[c / 64] |= 1 << (c % 64);
        }
        Ok(m)
    }

    pub fn contains(&self, col: usize) -> bool {
        col < self.cols && self.words[col / 64] >> (col % 64) & 1 == 1
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cols).filter(move |&c| self.contains(c))
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// Row-wide Boolean operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoolOp {
    And,
    Or,
    Xor,
    Nand,
    /// `rowA XOR ones`; the B operand is always the all-ones row.
    Not,
}

impl BoolOp {
    fn sa_op(self) -> SaOp {
        match self {
            BoolOp::And => SaOp::And,
            BoolOp::Or => SaOp::Or,
            BoolOp::Xor => SaOp::Xor,
            BoolOp::Nand => SaOp::Nand,
            BoolOp::Not => SaOp::Not,
        }
    }
}

/// A simulated computing memory array with its sense amplifiers and counters.
#[derive(Debug, Clone)]
pub struct Cma {
    geom: CmaGeometry,
    wpr: usize,
    cells: Vec<u64>,
    carry: Vec<u64>,
    ledger: CostLedger,
    wear: CellWear,
}

impl Cma {
    pub fn new(geom: CmaGeometry) -> Result<Cma> {
        geom.validate()?;
        let wpr = geom.words_per_row();
        let mut cma = Cma {
            geom,
            wpr,
            cells: vec![0; geom.physical_rows() * wpr],
            carry: vec![0; wpr],
            ledger: CostLedger::default(),
            wear: CellWear::new(geom.rows, geom.cols),
        };
        let ones = ColumnMask::all(geom.cols);
        let r = geom.ones_row();
        cma.cells[r * wpr..(r + 1) * wpr].copy_from_slice(&ones.words);
        Ok(cma)
    }

    pub fn geometry(&self) -> CmaGeometry {
        self.geom
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn wear(&self) -> &CellWear {
        &self.wear
    }

    pub fn take_ledger(&mut self) -> CostLedger {
        std::mem::take(&mut self.ledger)
    }

    /// Charges controller-side events (weight loads, reductions) to this array.
    pub fn charge(&mut self, extra: CostLedger) {
        self.ledger += extra;
    }

    pub fn bit(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.wpr + col / 64] >> (col % 64) & 1 == 1
    }

    fn set_bit(&mut self, row: usize, col: usize, v: bool) {
        let w = &mut self.cells[row * self.wpr + col / 64];
        if v {
            *w |= 1 << (col % 64);
        } else {
            *w &= !(1 << (col % 64));
        }
    }

    fn check_slot(&self, slot: &OperandSlot) -> Result<()> {
        if slot.col >= self.geom.cols {
            return Err(Error::SlotOutOfRange(format!(
                "column {} >= {}",
                slot.col, self.geom.cols
            )));
        }
        if slot.bits == 0 || slot.bits > 63 || slot.base_row + slot.bits as usize > self.geom.rows {
            return Err(Error::SlotOutOfRange(format!(
                "rows {}..{} outside 0..{}",
                slot.base_row,
                slot.base_row + slot.bits as usize,
                self.geom.rows
            )));
        }
        Ok(())
    }

    fn check_mask(&self, mask: &ColumnMask) -> Result<()> {
        if mask.cols != self.geom.cols {
            return Err(Error::Layout(format!(
                "mask covers {} columns, array has {}",
                mask.cols, self.geom.cols
            )));
        }
        Ok(())
    }

    pub fn write_operand(&mut self, slot: OperandSlot, value: i64) -> Result<()> {
        self.check_slot(&slot)?;
        let (lo, hi) = slot.signedness.range(slot.bits);
        if value < lo || value > hi {
            return Err(Error::Overflow {
                value,
                bits: slot.bits,
                signedness: slot.signedness.name(),
            });
        }
        let raw = value as u64;
        for i in 0..slot.bits as usize {
            self.set_bit(slot.base_row + i, slot.col, raw >> i & 1 == 1);
            self.wear.record(slot.base_row + i, slot.col);
        }
        self.ledger.cell_writes += slot.bits as u64;
        Ok(())
    }

    pub fn read_operand(&mut self, slot: OperandSlot) -> Result<i64> {
        self.check_slot(&slot)?;
        self.ledger.cell_reads += slot.bits as u64;
        Ok(self.peek_operand(slot))
    }

    /// Reads without counting; for assertions and debugging.
    pub fn peek_operand(&self, slot: OperandSlot) -> i64 {
        let mut raw = 0u64;
        for i in 0..slot.bits as usize {
            if self.bit(slot.base_row + i, slot.col) {
                raw |= 1 << i;
            }
        }
        match slot.signedness {
            Signedness::Unsigned => raw as i64,
            Signedness::TwosComplement => {
                let shift = 64 - slot.bits;
                ((raw << shift) as i64) >> shift
            }
        }
    }

    fn check_dest_row(&self, row: usize) -> Result<()> {
        if row == self.geom.ones_row() || row == self.geom.zeros_row() {
            return Err(Error::ReservedRow(row));
        }
        if row >= self.geom.rows {
            return Err(Error::SlotOutOfRange(format!("row {row} >= {}", self.geom.rows)));
        }
        Ok(())
    }

    fn check_source_row(&self, row: usize) -> Result<()> {
        if row >= self.geom.physical_rows() {
            return Err(Error::SlotOutOfRange(format!(
                "row {row} >= {}",
                self.geom.physical_rows()
            )));
        }
        Ok(())
    }

    /// One sensing cycle over `mask`: reads rows `a`/`b`, writes `dest`.
    fn cycle(&mut self, a: usize, b: usize, dest: usize, cfg: SaConfig, mask: &ColumnMask) {
        let wpr = self.wpr;
        for w in 0..wpr {
            let m = mask.words[w];
            if m == 0 {
                continue;
            }
            let av = self.cells[a * wpr + w];
            let bv = self.cells[b * wpr + w];
            let (out, cout) = lanes::evaluate(av, bv, cfg, self.carry[w]);
            if cfg.port() == Port::Sum {
                self.carry[w] = (self.carry[w] & !m) | (cout & m);
            }
            let d = &mut self.cells[dest * wpr + w];
            *d = (*d & !m) | (out & m);
        }
        let n = mask.count();
        self.ledger.row_activations += 1;
        self.ledger.sa_cycles += n;
        self.ledger.cell_reads += if cfg.is_single_cell() { n } else { 2 * n };
        self.ledger.cell_writes += n;
        self.wear.record_row(dest, &mask.words);
    }

    pub fn rowpair_bool(
        &mut self,
        op: BoolOp,
        row_a: usize,
        row_b: usize,
        dest: usize,
        mask: &ColumnMask,
    ) -> Result<()> {
        self.check_mask(mask)?;
        let row_b = if op == BoolOp::Not {
            self.geom.ones_row()
        } else {
            row_b
        };
        self.check_source_row(row_a)?;
        self.check_source_row(row_b)?;
        self.check_dest_row(dest)?;
        if row_a == row_b {
            return Err(Error::Layout(format!("source rows must differ, got {row_a} twice")));
        }
        if dest == row_a || dest == row_b {
            return Err(Error::Layout(format!("destination row {dest} is also a source")));
        }
        self.cycle(row_a, row_b, dest, SaConfig::for_op(op.sa_op()), mask);
        Ok(())
    }

    fn source_row(&self, span: &RowSpan, i: u32) -> usize {
        if i < span.bits {
            span.base_row + i as usize
        } else {
            self.geom.zeros_row()
        }
    }

    fn check_vector(&self, srcs: &[RowSpan], dest: &RowSpan, width: u32, mask: &ColumnMask) -> Result<()> {
        self.check_mask(mask)?;
        if width == 0 || width > self.geom.acc_bits {
            return Err(Error::Layout(format!(
                "width {width} outside 1..={}",
                self.geom.acc_bits
            )));
        }
        if dest.bits < width {
            return Err(Error::Layout(format!(
                "destination holds {} bits, pass writes {width}",
                dest.bits
            )));
        }
        for r in dest.base_row..dest.base_row + width as usize {
            self.check_dest_row(r)?;
        }
        for s in srcs {
            if s.bits > 0 && s.base_row + s.bits as usize > self.geom.rows {
                return Err(Error::SlotOutOfRange(format!(
                    "source rows {}..{} outside 0..{}",
                    s.base_row,
                    s.base_row + s.bits as usize,
                    self.geom.rows
                )));
            }
            if s.overlaps(dest, width) {
                return Err(Error::Layout(format!(
                    "destination rows {}.. overlap source rows {}..",
                    dest.base_row, s.base_row
                )));
            }
        }
        Ok(())
    }

    fn bit_serial(&mut self, a: RowSpan, b: RowSpan, dest: RowSpan, width: u32, carry_in: bool, mask: &ColumnMask) {
        let init = if carry_in { u64::MAX } else { 0 };
        for (w, c) in self.carry.iter_mut().enumerate() {
            *c = (*c & !mask.words[w]) | (init & mask.words[w]);
        }
        let cfg = SaConfig::for_op(SaOp::Add);
        for i in 0..width {
            let ra = self.source_row(&a, i);
            let rb = self.source_row(&b, i);
            self.cycle(ra, rb, dest.base_row + i as usize, cfg, mask);
        }
    }

    /// `dest = (a + b) mod 2^width` in every enabled column.
    pub fn vector_add(&mut self, a: RowSpan, b: RowSpan, dest: RowSpan, width: u32, mask: &ColumnMask) -> Result<()> {
        self.check_vector(&[a, b], &dest, width, mask)?;
        self.bit_serial(a, b, dest, width, false, mask);
        Ok(())
    }

    /// `scratch = NOT b` over `width` bits (zero-extended `b` first).
    pub fn vector_not(&mut self, b: RowSpan, dest: RowSpan, width: u32, mask: &ColumnMask) -> Result<()> {
        self.check_vector(&[b], &dest, width, mask)?;
        let cfg = SaConfig::for_op(SaOp::Not);
        let ones = self.geom.ones_row();
        for i in 0..width {
            let rb = self.source_row(&b, i);
            self.cycle(rb, ones, dest.base_row + i as usize, cfg, mask);
        }
        Ok(())
    }

    /// `dest = (a - b) mod 2^width`, as `NOT b` into `scratch` followed by an
    /// addition whose carry latches start at 1.
    pub fn vector_sub(
        &mut self,
        a: RowSpan,
        b: RowSpan,
        dest: RowSpan,
        scratch: RowSpan,
        width: u32,
        mask: &ColumnMask,
    ) -> Result<()> {
        self.check_vector(&[a, b], &dest, width, mask)?;
        self.check_vector(&[a, b], &scratch, width, mask)?;
        if scratch.base_row == a.base_row || scratch.base_row == b.base_row {
            return Err(Error::Layout("scratch must not alias a source".into()));
        }
        if scratch.overlaps(&dest, width) || scratch.base_row == dest.base_row {
            return Err(Error::Layout("scratch overlaps the destination".into()));
        }
        self.vector_not(b, scratch, width, mask)?;
        self.bit_serial(a, scratch, dest, width, true, mask);
        Ok(())
    }

    /// `dest = src`, zero-extended to `width`, as XOR with the zeros row.
    pub fn copy_operand(&mut self, src: RowSpan, dest: RowSpan, width: u32, mask: &ColumnMask) -> Result<()> {
        self.check_vector(&[src], &dest, width, mask)?;
        let xor = SaConfig::for_op(SaOp::Xor);
        let and = SaConfig::for_op(SaOp::And);
        let (ones, zeros) = (self.geom.ones_row(), self.geom.zeros_row());
        for i in 0..width {
            let d = dest.base_row + i as usize;
            if i < src.bits {
                self.cycle(src.base_row + i as usize, zeros, d, xor, mask);
            } else {
                self.cycle(zeros, ones, d, and, mask);
            }
        }
        Ok(())
    }

    /// Clears `width` rows of `dest` in every enabled column.
    pub fn write_zero(&mut self, dest: RowSpan, width: u32, mask: &ColumnMask) -> Result<()> {
        self.copy_operand(RowSpan::ZERO, dest, width, mask)
    }

    /// Snapshot of all physical rows, row-major, bit-packed LSB first.
    pub fn snapshot(&self) -> Vec<u8> {
        let (rows, cols) = (self.geom.physical_rows(), self.geom.cols);
        let mut out = vec![0u8; (rows * cols).div_ceil(8)];
        for r in 0..rows {
            for c in 0..cols {
                if self.bit(r, c) {
                    let idx = r * cols + c;
                    out[idx / 8] |= 1 << (idx % 8);
                }
            }
        }
        out
    }

    /// Rebuilds an array from [`Cma::snapshot`] output; counters start at zero.
    pub fn restore(geom: CmaGeometry, blob: &[u8]) -> Result<Cma> {
        let mut cma = Cma::new(geom)?;
        let (rows, cols) = (geom.physical_rows(), geom.cols);
        if blob.len() != (rows * cols).div_ceil(8) {
            return Err(Error::Format(format!(
                "snapshot has {} bytes, expected {}",
                blob.len(),
                (rows * cols).div_ceil(8)
            )));
        }
        for r in 0..rows {
            for c in 0..cols {
                let idx = r * cols + c;
                cma.set_bit(r, c, blob[idx / 8] >> (idx % 8) & 1 == 1);
            }
        }
        if !cma.constant_rows_intact() {
            return Err(Error::Format("snapshot constant rows are corrupted".into()));
        }
        Ok(cma)
    }

    pub fn constant_rows_intact(&self) -> bool {
        (0..self.geom.cols).all(|c| self.bit(self.geom.ones_row(), c) && !self.bit(self.geom.zeros_row(), c))
    }
}
