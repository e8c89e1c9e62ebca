use thiserror::Error;

/// Errors raised by the geometry, sampling and experiment layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),

    #[error("radius must be nonnegative and at most {max}, got {value}")]
    Radius { value: f64, max: f64 },

    #[error("volume must be nonnegative and finite, got {0}")]
    Volume(f64),

    #[error("direction must be a unit vector of length {expected}; got length {len} and norm {norm}")]
    Direction { expected: usize, len: usize, norm: f64 },

    #[error("ball separation {s} exceeds twice the radius {r}; intersection boundary is empty")]
    DisjointBalls { r: f64, s: f64 },

    #[error("invalid threshold: {0}")]
    Threshold(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown neighbour index backend {0:?}")]
    UnknownIndex(String),

    #[error("replication {id} failed: {source}")]
    Replication { id: u64, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
