use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("simplex stalled: {0}")]
    SolverStall(String),

    #[error("no feasible solution found within the initial budget: {0}")]
    InitFailure(String),

    #[error("weights format error: {0}")]
    Format(String),

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite loss on example {example}: {value}")]
    NanLoss { example: String, value: f64 },
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(format!(
            "json at line {}, column {}: {err}",
            err.line(),
            err.column()
        ))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
