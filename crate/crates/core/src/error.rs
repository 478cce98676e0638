use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state index {state} (state space has {size} states)")]
    InvalidState { state: usize, size: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model is not critical: Perron eigenvalue {lambda:.3e} exceeds tolerance")]
    NonCritical { lambda: f64 },

    #[error("first-moment generator is reducible: {0}")]
    Reducible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("query at time {time} is beyond the censoring point of the tree")]
    CensoredQuery { time: f64 },

    #[error("no tree survived to time {horizon} after {attempts} attempts")]
    RejectionBudgetExceeded { horizon: f64, attempts: u64 },

    #[error("exploration time {time} outside [0, {length})")]
    OutOfRange { time: f64, length: f64 },

    #[error("unknown label {0}")]
    UnknownLabel(String),

    #[error("tree has zero total length")]
    DegenerateTree,

    #[error("no particles alive at time {0}")]
    NoSurvivors(f64),

    #[error("only {found} surviving replicates, need at least {required}")]
    TooFewSurvivors { found: usize, required: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
