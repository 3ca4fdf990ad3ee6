use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("input matrix unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("empty parameter cloud: {0}")]
    EmptyCloud(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("controller contract violation: {0}")]
    ContractViolation(String),

    #[error("division guard: {0}")]
    DivisionGuard(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
