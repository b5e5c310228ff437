use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SrError {
    #[error("point {point:?} lies outside the domain box")]
    OutsideDomain { point: Vec<f64> },

    #[error("trajectory left the domain box at t = {time}")]
    Escape { time: f64 },

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("bracket-generating condition fails up to depth {max_depth}: rank {rank} < {dim}")]
    HormanderViolation {
        max_depth: usize,
        rank: usize,
        dim: usize,
    },

    #[error("parameter outside its domain: {0}")]
    Domain(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SrError>;

impl From<std::io::Error> for SrError {
    fn from(e: std::io::Error) -> Self {
        SrError::Io(e.to_string())
    }
}
