use thiserror::Error;

pub type Result<T> = std::result::Result<T, GdtError>;

#[derive(Debug, Error)]
pub enum GdtError {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A sampling plan cannot be executed as stated.
    #[error("plan error: {0}")]
    Plan(String),

    #[error("config error: {0}")]
    Config(String),

    /// An anchor has a counted positive but nothing to normalise against.
    #[error("degenerate objective: anchor {anchor} has a weighted positive but an empty denominator")]
    DegenerateObjective { anchor: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl GdtError {
    /// Process exit status: 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            GdtError::Usage(_) | GdtError::Config(_) | GdtError::Parse(_) | GdtError::Plan(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GdtError::Domain(msg.into())
    }
}
