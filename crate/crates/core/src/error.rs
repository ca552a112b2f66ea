use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chain geometry: {0}")]
    Chain(String),

    #[error("invalid control schedule: {0}")]
    Schedule(String),

    #[error("frequency vector violates the zero-sum constraint (sum = {0:e})")]
    ZeroSum(f64),

    #[error("invalid evolution model: {0}")]
    Model(String),

    #[error("invalid sender state: {0}")]
    State(String),

    #[error("oracle limited to N <= {max} sites (got {n})")]
    OracleSize { n: usize, max: usize },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
