use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("solver: {0}")]
    Solver(#[from] trajopt_core::Error),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("solver `{solver}` does not handle scenario kind `{kind}`")]
    Unsupported { solver: String, kind: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type BenchResult<T> = Result<T, BenchError>;
