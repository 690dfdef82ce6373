use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes violate an operation's precondition.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A numerical contract was violated (non-normalized probabilities, non-finite values).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A generic precondition failure that is not about tensor shapes.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("task suite capacity exceeded: requested {requested} tasks, at most {capacity} distinct tasks available")]
    Capacity { requested: usize, capacity: usize },

    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    TrainingDiverged { epoch: usize },

    #[error("modelset build failed for task {task_id}: {reason}")]
    ModelSetBuild { task_id: usize, reason: String },

    #[error("bad magic in {path}: expected WSKCKPT1")]
    BadMagic { path: PathBuf },

    #[error("unsupported container version {found} in {path}")]
    UnsupportedVersion { path: PathBuf, found: u32 },

    #[error("truncated payload in {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("unsupported architecture: {0}")]
    UnsupportedArch(String),

    #[error("split error: {0}")]
    Split(String),

    /// Alignment routing record does not correspond to the supplied tensors.
    #[error("stale routing record: {0}")]
    Consistency(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metadata error in {path}: {source}")]
    Metadata {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
