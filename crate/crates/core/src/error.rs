use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (bad CSV, schema violation, shape mismatch).
    #[error("input error: {0}")]
    Input(String),

    /// A precondition on an operation's arguments was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// Linear algebra or density evaluation failed beyond recoverable jitter.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The sampler could not produce usable draws (e.g. every warmup step diverged).
    #[error("sampling failure: {0}")]
    Sampling(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 3 for bad inputs, 4 for numerical trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Csv(_) | Error::Json(_) | Error::Io(_) => 3,
            Error::Domain(_) => 3,
            Error::Numerical(_) | Error::Sampling(_) => 4,
        }
    }
}
