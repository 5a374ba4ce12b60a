use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid Levy measure: {0}")]
    InvalidLevyMeasure(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureDiverged(String),

    #[error("criterion not evaluable: {0}")]
    NotEvaluable(String),

    #[error("config validation failed:\n{}", .0.join("\n"))]
    ConfigInvalid(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("internal error: {0}")]
    Internal(String),
}
