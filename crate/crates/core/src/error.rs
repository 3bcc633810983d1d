use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("w_test + w_llm must equal 1 (got {0})")]
    WeightSum(f64),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("c_base must be positive")]
    NonPositiveCBase,
    #[error("max_rollouts must be at least 1")]
    NoRollouts,
    #[error("max_children must be at least 1")]
    NoChildren,
}

/// Failures talking to (or making sense of) the language model.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("missing credential: environment variable {0} is not set")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimit { attempts: u32 },
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not parse model reply: {0}")]
    Parse(String),
    #[error("no fenced code block in model reply")]
    NoCodeBlock,
    #[error("no replay fixture for key {0}")]
    FixtureMissing(String),
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("fixture file {path}: {source}")]
    FixtureFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture file {path}: {reason}")]
    FixtureFormat { path: PathBuf, reason: String },
}

/// Failures of the execution machinery itself, never of the program under test.
#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox setup failed: {0}")]
    Setup(#[from] std::io::Error),
    #[error("trace harness malfunctioned: {0}")]
    TraceHarness(String),
    #[error("trace harness timed out after {seconds:.1}s")]
    Timeout { seconds: f64, partial_stderr: String },
    #[error("empty program")]
    EmptyProgram,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("unknown dataset format {0:?}")]
    UnknownFormat(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no results to aggregate")]
    NoResults,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("rollout budget exhausted")]
    BudgetExhausted,
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}
