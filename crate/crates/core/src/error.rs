use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite state at step {step}: {reason}")]
    StepFault { step: usize, reason: String },
    #[error("trial {trial} aborted: {source}")]
    TrialFault { trial: u64, source: Box<Error> },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("fit domain error: {0}")]
    FitDomain(String),
    #[error("sigmoid fit did not converge within {0} iterations")]
    Convergence(usize),
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
