use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unsupported signature ({p},{q}); supported: (1,0), (0,1), (2,0), (1,1), (0,2)")]
    UnsupportedSignature { p: u32, q: u32 },

    #[error("moment `{0}` missing from table")]
    MissingMoment(String),

    #[error("action term `{term}` scales as N^{power} at large N; loop equations need N^2")]
    Scaling { term: String, power: i64 },

    #[error("inconsistent loop equations at degree {degree}: residual relation `{relation}`")]
    Inconsistent { degree: usize, relation: String },

    #[error("non-finite value while evaluating `{0}`")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no convergence after {restarts} restarts (best projected-gradient residual {residual:.3e})")]
    NoConvergence { restarts: usize, residual: f64 },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code: 2 for rejected input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_)
            | Error::UnsupportedSignature { .. }
            | Error::Json(_)
            | Error::Scaling { .. }
            | Error::MissingMoment(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}
