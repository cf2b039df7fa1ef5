use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("series too short: need at least {needed} observations, got {got}")]
    Length { needed: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("column `{0}` has zero variance")]
    DegenerateScale(String),

    #[error("degenerate residual variance: {0}")]
    DegenerateVariance(String),

    #[error("non-finite value in {0}")]
    NumericalDomain(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint write failed after {completed_sweeps} sweeps: {source}")]
    Checkpoint {
        completed_sweeps: usize,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than the inputs or setup.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalDomain(_)
                | Error::NotPositiveDefinite(_)
                | Error::DegenerateVariance(_)
                | Error::UndefinedRatio(_)
        )
    }
}
