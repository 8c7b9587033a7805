use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("normal equations are rank deficient at ridge_lambda = 0; set ridge_lambda > 0")]
    RankDeficient,

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("degenerate study: {0}")]
    DegenerateStudy(String),

    #[error("invalid fold plan: {0}")]
    FoldPlan(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("empty evaluation set: {0}")]
    EmptyEval(String),

    #[error("missing dual-treatment label for sample {index}")]
    MissingLabel { index: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
