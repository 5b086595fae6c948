use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("pca kernel cannot be evaluated at arbitrary points")]
    UnsupportedEvaluation,

    #[error("pca kernel anchor does not match the reference point set")]
    AnchorMismatch,

    #[error("requested rank {requested} exceeds available nonzero spectrum ({available})")]
    RankTooLarge { requested: usize, available: usize },

    #[error("matrix is not positive definite after jitter (smallest pivot {pivot:e})")]
    NotPositiveDefinite { pivot: f64 },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no annotations for reference point")]
    NoAnnotation,

    #[error("annotator variance undefined for zero responsibility")]
    ExcludedPair,

    #[error("all reference points are missing")]
    AllMissing,

    #[error("no responsibility mass on any reference point")]
    NoMass,

    #[error("registration failed; distance metrics are undefined")]
    FailedRegistration,

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
