use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// An input violates the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The transfer kernel does not satisfy the structural assumptions
    /// an algorithm relies on.
    #[error("kernel error: {0}")]
    Kernel(String),

    /// A caller-side precondition was not met.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Iterative method failed: divergence, non-finite values, or budget
    /// exhausted. `last_iterate` carries whatever state was reached.
    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        last_iterate: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            last_iterate: Vec::new(),
        }
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Domain(_) | Error::Precondition(_) => 2,
            Error::Kernel(_) | Error::Numerical { .. } => 3,
            Error::Io(_) | Error::Json(_) => 3,
        }
    }
}
