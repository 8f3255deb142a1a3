use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("batch error: {0}")]
    Batch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
