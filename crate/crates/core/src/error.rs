use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("illegal sense amplifier configuration: {0}")]
    IllegalSaConfig(String),

    #[error("value {value} does not fit in a {bits}-bit {signedness} slot")]
    Overflow {
        value: i64,
        bits: u32,
        signedness: &'static str,
    },

    #[error("slot out of range: {0}")]
    SlotOutOfRange(String),

    #[error("reserved constant row {0} cannot be written")]
    ReservedRow(usize),

    #[error("invalid operand layout: {0}")]
    Layout(String),

    #[error("illegal weight: {0}")]
    IllegalWeight(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid hardware configuration: {0}")]
    Hardware(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
