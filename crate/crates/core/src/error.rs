use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate vislet: anchor coincides with its origin")]
    DegenerateVislet,

    #[error("undefined motion: zero displacement between consecutive positions")]
    UndefinedMotion,

    #[error("parameter overflow: log-diagonal entry {value} exceeds the representable range")]
    ParameterOverflow { value: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("training diverged at {at}: {detail}")]
    Divergence { at: String, detail: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("no valid evaluation windows: {0}")]
    EmptyReport(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
