use thiserror::Error;

pub type Result<T> = std::result::Result<T, NliError>;

#[derive(Debug, Error)]
pub enum NliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid frequency grid: {0}")]
    Grid(String),
    #[error("joint spectrum has zero norm")]
    ZeroNorm,
    #[error("filter band does not overlap the {0} axis")]
    NoOverlap(&'static str),
    #[error("zero mass in the {0} band")]
    EmptyBand(&'static str),
    #[error("grids differ: {0}")]
    GridMismatch(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("degenerate estimator input: {0}")]
    Degenerate(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for NliError {
    fn from(e: serde_json::Error) -> Self {
        NliError::Parse(e.to_string())
    }
}

impl From<csv::Error> for NliError {
    fn from(e: csv::Error) -> Self {
        NliError::Parse(e.to_string())
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> NliError {
    NliError::Config(msg.into())
}
