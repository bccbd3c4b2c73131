use thiserror::Error;

pub type Result<T> = std::result::Result<T, SdviError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdviError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite state at node {node} (t = {t})")]
    NonFiniteState { node: usize, t: f64 },
    #[error("VI map returned NaN at t = {t}")]
    NanInViMap { t: f64 },
    #[error("time {t} is not available for interpolation: {reason}")]
    Interpolation { t: f64, reason: &'static str },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("path {path_index}: {source}")]
    Path {
        path_index: usize,
        #[source]
        source: Box<SdviError>,
    },
}

impl SdviError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SdviError::InvalidParameter(msg.into())
    }
}
