use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("kernel weight is infinite for coalition size {size} of {features}; the empty and full coalitions are constraints")]
    InfiniteWeight { features: usize, size: usize },

    #[error("exact enumeration over {features} features exceeds the limit of {limit}; use kernel_shap instead")]
    Budget { features: usize, limit: usize },

    #[error("background set is empty")]
    EmptyBackground,

    #[error("normal equations are rank deficient (rank {rank} of {unknowns} unknowns); a budget of at least {needed} coalitions is required")]
    RankDeficient {
        rank: usize,
        unknowns: usize,
        needed: usize,
    },

    #[error("local accuracy violated: base {base} + sum {sum} != value {value}")]
    LocalAccuracy { base: f64, sum: f64, value: f64 },

    #[error("rank set is empty")]
    EmptyRanks,

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
