use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("rejection sampling gave up after {attempts} draws; density is nearly disjoint from the box")]
    RejectionExhausted { attempts: usize },

    #[error("unsupported problem `{id}` with dimension {dim}")]
    UnsupportedProblem { id: String, dim: usize },

    #[error("point lies outside the domain")]
    OutsideDomain,

    #[error("point is not on the boundary (tolerance 1e-12)")]
    NotOnBoundary,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient entry while updating {role} at iteration {iteration}")]
    NonFiniteGradient { role: String, iteration: usize },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("checkpoint was written for a different configuration or format version")]
    CheckpointMismatch,

    #[error("finite-difference baseline diverged: {0}")]
    Divergence(String),

    #[error("ground truth is identically zero on the test grid")]
    ZeroReference,

    #[error("empty trace")]
    EmptyTrace,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
