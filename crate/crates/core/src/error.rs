use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("pmf evaluation failed at k = {k}: {reason}")]
    Evaluation { k: u64, reason: String },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("quadrature rule: {0}")]
    Quadrature(String),

    #[error("mode adaptation failed: {0}")]
    Adaptation(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("likelihood evaluation failed for subject {subject}, observation {observation}: {source}")]
    Likelihood {
        subject: usize,
        observation: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("design matrix is rank deficient: {0}")]
    Rank(String),

    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("hypothesis test failed: {0}")]
    Test(String),

    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
