use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("instance must contain at least one site")]
    EmptyInstance,

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid utility: {0}")]
    InvalidUtility(String),

    #[error("parse error in {path} at row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid transition matrix: {0}")]
    InvalidTransitionMatrix(String),

    #[error("chain is reducible: site {to} is unreachable from site {from}")]
    ReducibleChain { from: usize, to: usize },

    #[error(
        "first-visit truncation insufficient: pair ({from},{to}) has tail mass {tail:.3e} > {tol:.3e}"
    )]
    TruncationInsufficient {
        from: usize,
        to: usize,
        tail: f64,
        tol: f64,
    },

    #[error("horizon error: {0}")]
    Horizon(String),

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("no feasible schedule: {0}")]
    NoFeasibleSchedule(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}
