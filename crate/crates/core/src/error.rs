use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("insufficient data: {have} samples, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("excitation condition violated: rank {rank} < {required}")]
    Excitation { rank: usize, required: usize },

    #[error("not stabilizable: {0}")]
    Unstabilizable(String),

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("numeric failure in {what}: residual {residual:e}")]
    Numeric { what: String, residual: f64 },

    #[error("resonance: {0}")]
    Resonance(String),

    #[error("oracle construction failed: {0}")]
    Oracle(String),

    #[error("invalid configuration at {field}: {message}")]
    Config { field: String, message: String },

    #[error("invalid data file {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
