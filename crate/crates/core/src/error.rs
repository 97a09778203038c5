use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value {value} when evaluating at atom {atom}")]
    NonFiniteEvaluation { atom: usize, value: f64 },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("negative intensity tilt {value} at atom {atom}, cell {cell}")]
    NegativeTilt { atom: usize, cell: usize, value: f64 },

    #[error("event at time {time} lies outside [0, {horizon}]")]
    EventOutOfRange { time: f64, horizon: f64 },

    #[error("event references atom {atom}, but the measure has {n_atoms} atoms")]
    BadAtomIndex { atom: usize, n_atoms: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite right-hand side at t = {time}")]
    Integration { time: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{0}")]
    Construction(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
