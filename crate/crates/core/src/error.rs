use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or out-of-range configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite input or a sample outside the declared data domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A theorem precondition does not hold, so no bound can be certified.
    #[error("certification error: {0}")]
    Certification(String),

    /// An operation was invoked on a record that lacks required state.
    #[error("state error: {0}")]
    State(String),

    #[error("numeric divergence in {trajectory} trajectory at step {step}: {detail}")]
    NumericDivergence {
        trajectory: String,
        step: u64,
        detail: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn certification(msg: impl Into<String>) -> Self {
        Error::Certification(msg.into())
    }

    /// Process exit code used by the CLI: 1 validation, 3 numeric divergence.
    /// Check failures (2) are not errors and are decided by the caller.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericDivergence { .. } => 3,
            _ => 1,
        }
    }
}
