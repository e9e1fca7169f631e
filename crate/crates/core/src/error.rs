use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate bandwidth: median pairwise distance is zero")]
    DegenerateBandwidth,

    #[error("unsupported Sobolev kernel order {0} (even orders 2..=10 only)")]
    UnsupportedOrder(u32),

    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),

    #[error("line search failed in sub-problem {iteration}: {reason}")]
    LineSearch { iteration: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("construction failed for alpha={alpha}, r={r}: {reason}")]
    Construction { alpha: u32, r: f64, reason: String },

    #[error("selection failed at every grid point: {0:?}")]
    Selection(Vec<String>),

    #[error("all importance weights are zero")]
    DegenerateWeights,

    #[error("{file}: row {row}: {reason}")]
    Parse {
        file: String,
        row: usize,
        reason: String,
    },

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
