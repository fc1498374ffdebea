//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// ZC root not coprime with the sequence length; the cyclic
    /// autocorrelation identity would not hold.
    #[error("invalid ZC root {root} for length {len}: gcd is {gcd}")]
    InvalidRoot { root: u64, len: u64, gcd: u64 },

    /// A propagation path falls outside the delay grid.
    #[error("path range {range_m} m exceeds the delay grid extent {max_m} m")]
    OutOfGrid { range_m: f64, max_m: f64 },

    /// Tap-energy profile (or snapshot set) carries no energy at all.
    #[error("no signal: {0}")]
    NoSignal(String),

    /// Fewer snapshots than the subspace split requires.
    #[error("insufficient snapshots: {0}")]
    InsufficientSnapshots(String),

    /// Snapshot Gram matrix is numerically below rank 2; MUSIC has no
    /// noise subspace to project on.
    #[error("degenerate subspace: {0}")]
    DegenerateSubspace(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data/config, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::InvalidConfiguration(_)
            | Error::InvalidRoot { .. }
            | Error::ModelFile(_)
            | Error::Io(_)
            | Error::Serde(_) => 2,
            Error::OutOfGrid { .. }
            | Error::NoSignal(_)
            | Error::InsufficientSnapshots(_)
            | Error::DegenerateSubspace(_) => 3,
        }
    }
}
