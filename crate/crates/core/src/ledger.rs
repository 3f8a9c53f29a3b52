//! Deterministic event counters and per-cell write tracking.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Event counts produced by simulated arrays and controllers.
///
/// Merging is plain addition, so totals do not depend on the order in which
/// per-array ledgers are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Row (or row-pair) activations, one per bit step.
    pub row_activations: u64,
    /// Sense amplifier evaluations, one per enabled column per bit step.
    pub sa_cycles: u64,
    pub cell_writes: u64,
    pub cell_reads: u64,
    /// 2-bit weight register writes.
    pub reg_loads: u64,
    /// Controller-side additions in the reduction unit.
    pub reduce_ops: u64,
    /// Per-element DPU operations.
    pub dpu_ops: u64,
    /// Device-wide activation load rounds.
    pub load_rounds: u64,
}

impl CostLedger {
    pub fn merge(&mut self, other: &CostLedger) {
        *self += *other;
    }

    pub fn is_empty(&self) -> bool {
        *self == CostLedger::default()
    }
}

impl AddAssign for CostLedger {
    fn add_assign(&mut self, o: CostLedger) {
        self.row_activations += o.row_activations;
        self.sa_cycles += o.sa_cycles;
        self.cell_writes += o.cell_writes;
        self.cell_reads += o.cell_reads;
        self.reg_loads += o.reg_loads;
        self.reduce_ops += o.reduce_ops;
        self.dpu_ops += o.dpu_ops;
        self.load_rounds += o.load_rounds;
    }
}

impl Add for CostLedger {
    type Output = CostLedger;

    fn add(mut self, o: CostLedger) -> CostLedger {
        self += o;
        self
    }
}

impl std::iter::Sum for CostLedger {
    fn sum<I: Iterator<Item = CostLedger>>(iter: I) -> CostLedger {
        iter.fold(CostLedger::default(), |acc, l| acc + l)
    }
}

/// Write counters for every data cell of one array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellWear {
    rows: usize,
    cols: usize,
    counts: Vec<u32>,
}

impl CellWear {
    pub fn new(rows: usize, cols: usize) -> CellWear {
        CellWear {
            rows,
            cols,
            counts: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn record(&mut self, row: usize, col: usize) {
        self.counts[row * self.cols + col] += 1;
    }

    /// Adds one write to every column whose bit is set in `mask_words`.
    pub fn record_row(&mut self, row: usize, mask_words: &[u64]) {
        let base = row * self.cols;
        for (w, &word) in mask_words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let k = bits.trailing_zeros() as usize;
                self.counts[base + w * 64 + k] += 1;
                bits &= bits - 1;
            }
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.cols + col]
    }

    pub fn max_single_cell(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Maximum over the given rows only.
    pub fn max_in_rows(&self, rows: impl IntoIterator<Item = usize>) -> u32 {
        rows.into_iter()
            .flat_map(|r| self.counts[r * self.cols..(r + 1) * self.cols].iter().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn total_in_rows(&self, rows: impl IntoIterator<Item = usize>) -> u64 {
        rows.into_iter()
            .flat_map(|r| self.counts[r * self.cols..(r + 1) * self.cols].iter())
            .map(|&c| c as u64)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Wear of every array touched by a workload.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WearLedger {
    pub arrays: Vec<CellWear>,
}

impl WearLedger {
    pub fn max_single_cell(&self) -> u32 {
        self.arrays.iter().map(CellWear::max_single_cell).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.iter().all(|a| a.total() == 0)
    }

    pub fn total(&self) -> u64 {
        self.arrays.iter().map(CellWear::total).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_order_independent() {
        let a = CostLedger {
            row_activations: 3,
            sa_cycles: 7,
            cell_writes: 1,
            ..Default::default()
        };
        let b = CostLedger {
            reg_loads: 4,
            reduce_ops: 2,
            cell_writes: 5,
            ..Default::default()
        };
        let c = CostLedger {
            dpu_ops: 9,
            load_rounds: 1,
            ..Default::default()
        };
        assert_eq!((a + b) + c, a + (b + c));
        assert_eq!(a + b, b + a);
        let total: CostLedger = [c, a, b].into_iter().sum();
        assert_eq!(total, a + b + c);
    }

    #[test]
    fn wear_row_recording() {
        let mut w = CellWear::new(4, 130);
        w.record_row(2, &[0b101, 0, 1 << 1]);
        assert_eq!(w.get(2, 0), 1);
        assert_eq!(w.get(2, 1), 0);
        assert_eq!(w.get(2, 2), 1);
        assert_eq!(w.get(2, 129), 1);
        assert_eq!(w.total(), 3);
        assert_eq!(w.max_in_rows(0..2), 0);
    }
}
