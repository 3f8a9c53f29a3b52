//! Functional simulator and cost model of an STT-MRAM in-memory accelerator
//! for ternary-weight networks.
//!
//! The crate is layered bottom-up:
//!
//! * [`sa_logic`]: the per-column sense amplifier (sensing, combining, selecting, carry latch).
//! * [`memory_array`]: one computing memory array (CMA) with bit-serial vector arithmetic.
//! * [`sparse_control`]: ternary weight registers and the zero-skipping dot product.
//! * [`mapping`]: Img2Col lowering, the five mapping schemes and wear accounting.
//! * [`cost_model`]: latency/energy calibration, addition schemes and layer costs.
//! * [`engine`]: layer and network execution on simulated arrays plus the integer oracle.
//! * [`tensor`], [`model`]: file formats for tensors and network descriptions.
//! * [`report`]: CSV/JSON report emitters.

pub mod cost_model;
pub mod engine;
pub mod error;
pub mod ledger;
pub mod mapping;
pub mod memory_array;
pub mod model;
pub mod report;
pub mod sa_logic;
pub mod sparse_control;
pub mod tensor;

pub use error::{Error, Result};
