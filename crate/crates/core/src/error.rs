use std::io;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("geometry is degenerate: {0}")]
    DegenerateGeometry(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dissimilarity graph is disconnected ({count} components, sizes {sizes:?})")]
    DisconnectedGraph { count: usize, sizes: Vec<usize> },

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("zero correlation power at array {b}, antennas ({m1}, {m2}), subcarrier {n}")]
    DeadAntennaPair {
        b: usize,
        m1: usize,
        m2: usize,
        n: usize,
    },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero beamformer: predicted channel has zero norm")]
    ZeroBeamformer,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
