use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {0:?} lies outside the triangulated domain")]
    OutOfDomain(Vec<f64>),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid triangulation: {0}")]
    InvalidTriangulation(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint does not match spline space: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
