use thiserror::Error;

/// Errors shared across the estimation and simulation modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry: {0}")]
    NonFiniteEntry(String),
    #[error("empty matrix: {0}")]
    EmptyMatrix(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("failed to converge: {0}")]
    ConvergenceFailure(String),
    #[error("rank-deficient submatrix: {0}")]
    RankDeficientSubmatrix(String),
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
