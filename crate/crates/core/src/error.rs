use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("empty sample")]
    EmptySample,
    #[error("probe time {time} exceeds driver horizon {horizon}")]
    Horizon { time: f64, horizon: f64 },
    #[error("eigensolver did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("all {0} restarts produced degenerate trial functions")]
    Degenerate(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
