//! Behavioral sense amplifier.
//!
//! The analog chain is reduced to a three-level classifier over the two
//! activated cells (`00` low, `01`/`10` middle, `11` high). Two comparators
//! turn that level into AND and OR/NOR signals, four gates combine them with
//! the carry latch into XOR/SUM/Cout, and a four-port selector picks the
//! output.
//!
//! Every function exists in a scalar form (one column) and a lane form that
//! evaluates the same Boolean equations on 64 columns packed in a `u64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operations natively configured through the enable signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaOp {
    Read,
    Not,
    And,
    Nand,
    Or,
    Xor,
    Add,
}

impl SaOp {
    pub const ALL: [SaOp; 7] = [
        SaOp::Read,
        SaOp::Not,
        SaOp::And,
        SaOp::Nand,
        SaOp::Or,
        SaOp::Xor,
        SaOp::Add,
    ];
}

/// Output port of the selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    And,
    Or,
    Xor,
    Sum,
}

impl Port {
    /// `(sel1, sel2)` encoding of the port.
    pub fn selector_bits(self) -> (bool, bool) {
        match self {
            Port::And => (false, false),
            Port::Or => (false, true),
            Port::Xor => (true, false),
            Port::Sum => (true, true),
        }
    }

    pub fn from_selector_bits(sel1: bool, sel2: bool) -> Port {
        match (sel1, sel2) {
            (false, false) => Port::And,
            (false, true) => Port::Or,
            (true, false) => Port::Xor,
            (true, true) => Port::Sum,
        }
    }
}

/// Enable and selector signals of one sense amplifier.
///
/// Only the rows of the enable table are constructible; an arbitrary signal
/// combination goes through [`SaConfig::new`], which rejects anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SaConfig {
    en_read: bool,
    en_and: bool,
    en_or: bool,
    sel1: bool,
    sel2: bool,
}

impl SaConfig {
    pub fn for_op(op: SaOp) -> SaConfig {
        let (en_read, en_and, en_or, port) = match op {
            SaOp::Read => (true, false, false, Port::Or),
            SaOp::Not => (false, true, true, Port::Xor),
            SaOp::And => (false, true, false, Port::And),
            SaOp::Nand => (false, true, false, Port::Xor),
            SaOp::Or => (false, false, true, Port::Or),
            SaOp::Xor => (false, true, true, Port::Xor),
            SaOp::Add => (false, true, true, Port::Sum),
        };
        let (sel1, sel2) = port.selector_bits();
        SaConfig {
            en_read,
            en_and,
            en_or,
            sel1,
            sel2,
        }
    }

    /// Validates a raw signal combination against the configuration table.
    pub fn new(en_read: bool, en_and: bool, en_or: bool, sel1: bool, sel2: bool) -> Result<SaConfig> {
        let candidate = SaConfig {
            en_read,
            en_and,
            en_or,
            sel1,
            sel2,
        };
        if SaOp::ALL.iter().any(|&op| SaConfig::for_op(op) == candidate) {
            Ok(candidate)
        } else {
            Err(Error::IllegalSaConfig(format!(
                "EN_READ={} EN_AND={} EN_OR={} SEL=({},{})",
                en_read as u8, en_and as u8, en_or as u8, sel1 as u8, sel2 as u8
            )))
        }
    }

    pub fn en_read(&self) -> bool {
        self.en_read
    }

    pub fn en_and(&self) -> bool {
        self.en_and
    }

    pub fn en_or(&self) -> bool {
        self.en_or
    }

    pub fn port(&self) -> Port {
        Port::from_selector_bits(self.sel1, self.sel2)
    }

    /// True when the configuration senses a single cell.
    pub fn is_single_cell(&self) -> bool {
        self.en_read
    }
}

/// Discrete sensed level of two activated cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SenseLevel {
    Low,
    Mid,
    High,
}

impl SenseLevel {
    pub fn of_pair(a: bool, b: bool) -> SenseLevel {
        match (a as u8) + (b as u8) {
            0 => SenseLevel::Low,
            1 => SenseLevel::Mid,
            _ => SenseLevel::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ComparatorOutputs {
    pub and_sig: bool,
    pub or_sig: bool,
    pub nor_sig: bool,
}

/// Sensing plus comparing for one column.
///
/// With `en_read` only cell `a` is activated and `b` is ignored.
pub fn sense_pair(a: bool, b: bool, cfg: SaConfig) -> ComparatorOutputs {
    let and_sig;
    let or_sig;
    if cfg.en_read {
        // single cell, V_READ sits between the two single-cell levels
        and_sig = false;
        or_sig = a;
    } else {
        let level = SenseLevel::of_pair(a, b);
        and_sig = cfg.en_and && level == SenseLevel::High;
        or_sig = cfg.en_or && level >= SenseLevel::Mid;
    }
    // With EN_OR and EN_READ both low the NOR output is forced to 0.
    let nor_sig = (cfg.en_or || cfg.en_read) && !or_sig;
    ComparatorOutputs {
        and_sig,
        or_sig,
        nor_sig,
    }
}

/// Values present on the four selector inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PortSignals {
    pub and: bool,
    pub or: bool,
    pub xor: bool,
    pub sum: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Combined {
    pub xor: bool,
    pub sum: bool,
    pub cout: bool,
}

/// Combining stage: `XOR = AND NOR NOR`, `SUM = XOR ^ Cin`,
/// `Cout = (OR & Cin) | AND`.
pub fn combine(c: ComparatorOutputs, carry_in: bool) -> Combined {
    let xor = !(c.and_sig || c.nor_sig);
    let sum = xor ^ carry_in;
    let cout = (c.or_sig && carry_in) || c.and_sig;
    Combined { xor, sum, cout }
}

pub fn port_signals(c: ComparatorOutputs, combined: Combined) -> PortSignals {
    PortSignals {
        and: c.and_sig,
        or: c.or_sig,
        xor: combined.xor,
        sum: combined.sum,
    }
}

pub fn select(cfg: SaConfig, signals: PortSignals) -> bool {
    match cfg.port() {
        Port::And => signals.and,
        Port::Or => signals.or,
        Port::Xor => signals.xor,
        Port::Sum => signals.sum,
    }
}

/// Full signal path for one column: sense, combine with the latch, select.
pub fn evaluate(a: bool, b: bool, cfg: SaConfig, carry_in: bool) -> (bool, Combined) {
    let c = sense_pair(a, b, cfg);
    let combined = combine(c, carry_in);
    (select(cfg, port_signals(c, combined)), combined)
}

/// Per-column sense amplifier state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaState {
    pub carry_latch: bool,
    pub cycles: u64,
}

impl SaState {
    /// Resets the latch before an addition: 0 for ADD, 1 for SUB.
    pub fn reset(&mut self, carry: bool) {
        self.carry_latch = carry;
    }

    /// One bit step of the sequential adder.
    pub fn step_add(&mut self, a: bool, b: bool) -> bool {
        let (out, combined) = evaluate(a, b, SaConfig::for_op(SaOp::Add), self.carry_latch);
        self.carry_latch = combined.cout;
        self.cycles += 1;
        out
    }
}

/// 64 columns evaluated at once; bit `k` of every word belongs to column `k`.
pub mod lanes {
    use super::SaConfig;
    use super::Port;

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub struct ComparatorLanes {
        pub and_sig: u64,
        pub or_sig: u64,
        pub nor_sig: u64,
    }

    pub fn sense_pair(a: u64, b: u64, cfg: SaConfig) -> ComparatorLanes {
        let (and_sig, or_sig) = if cfg.en_read() {
            (0, a)
        } else {
            let and_sig = if cfg.en_and() { a & b } else { 0 };
            let or_sig = if cfg.en_or() { a | b } else { 0 };
            (and_sig, or_sig)
        };
        let nor_sig = if cfg.en_or() || cfg.en_read() { !or_sig } else { 0 };
        ComparatorLanes {
            and_sig,
            or_sig,
            nor_sig,
        }
    }

    /// Returns `(out, cout)` for 64 columns.
    pub fn evaluate(a: u64, b: u64, cfg: SaConfig, carry_in: u64) -> (u64, u64) {
        let c = sense_pair(a, b, cfg);
        let xor = !(c.and_sig | c.nor_sig);
        let sum = xor ^ carry_in;
        let cout = (c.or_sig & carry_in) | c.and_sig;
        let out = match cfg.port() {
            Port::And => c.and_sig,
            Port::Or => c.or_sig,
            Port::Xor => xor,
            Port::Sum => sum,
        };
        (out, cout)
    }
}
