use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the search library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounds on dimension {dim}: lower {lower} must be < upper {upper}")]
    InvalidBounds { dim: usize, lower: f64, upper: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty swarm")]
    EmptySwarm,

    #[error("convergence window incomplete: {have} of {need} entries")]
    IncompleteWindow { have: usize, need: usize },

    /// `origin` is `line N` for file entries or `flag --name` for overrides.
    #[error("config error at {origin} (key `{key}`): {message}")]
    Config {
        key: String,
        origin: String,
        message: String,
    },

    #[error("space file line {line}: {message}")]
    SpaceFormat { line: usize, message: String },

    #[error("missing genotype {0}")]
    MissingGenotype(String),

    #[error("unknown genotype {0}")]
    UnknownGenotype(String),

    #[error("query budget exhausted ({max} queries)")]
    BudgetExhausted { max: u64 },

    #[error("genotype format: {0}")]
    GenotypeFormat(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
