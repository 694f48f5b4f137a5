use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular {block} block (det = {det:e})")]
    SingularBlock { block: &'static str, det: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("degenerate mapping: {0}")]
    DegenerateMapping(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("rotation cannot be decomposed: {0}")]
    Decomposition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed sidecar {path}: {source}")]
    Sidecar {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
