use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Task and suite validation / loading failures.
#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate task id `{0}`")]
    DuplicateId(String),
    #[error("unsupported schema version `{0}`")]
    SchemaVersion(String),
    #[error("manifest counts disagree with task list: {0}")]
    CountMismatch(String),
    #[error("bad suite specifier `{0}`")]
    Specifier(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failure to obtain a browser session. Distinct from in-episode faults.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProvisionError {
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("provider timed out after {0} ms")]
    Timeout(u64),
    #[error("provider quota exhausted")]
    Quota,
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("attach failed: {0}")]
    Attach(String),
}

/// The browser transport is gone; the episode cannot continue.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("browser session lost: {0}")]
pub struct SessionLost(pub String);

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("episode initialization failed: {0}")]
    Init(String),
}

#[derive(Debug, Error)]
pub enum MockGraphError {
    #[error("unsupported graph schema version `{0}`")]
    SchemaVersion(String),
    #[error("page `{page}`: link to undefined page `{target}`")]
    DanglingLink { page: String, target: String },
    #[error("hijackment on `{page}`: {reason}")]
    Hijackment { page: String, reason: String },
    #[error("graph has no 404 page `{0}`")]
    MissingNotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
