use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("schedule order violated: expected {lower} < {upper}")]
    ScheduleOrder { lower: f64, upper: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("score model error: {0}")]
    Model(String),

    #[error("transport failure talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("malformed response from {endpoint}: {message}")]
    MalformedResponse { endpoint: String, message: String },

    #[error("response shape mismatch from {endpoint}: expected {expected}, got {got}")]
    ShapeMismatch {
        endpoint: String,
        expected: String,
        got: String,
    },

    #[error("server at {endpoint} rejected request ({status}): {message}")]
    Remote {
        endpoint: String,
        status: u16,
        message: String,
    },

    #[error("solver diverged after {iterations} iterations (non-finite objective)")]
    SolverDivergence { iterations: usize },

    #[error("trajectory diverged at step {step} (sigma = {sigma}): {reason}")]
    Divergence {
        step: usize,
        sigma: f64,
        reason: String,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
