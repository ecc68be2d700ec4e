use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller supplied arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("{path}: I/O error: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}", path = path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("dimension mismatch in {record}: expected {expected}, found {found}")]
    DimensionMismatch {
        record: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {record} at element {index}")]
    NonFinite { record: String, index: usize },

    #[error(
        "ground truth of query {query_id} ({begin_s}s, {end_s}s) lies outside [0, {duration_s}] of video {video_id}"
    )]
    GroundTruthOutOfRange {
        query_id: String,
        video_id: String,
        begin_s: f64,
        end_s: f64,
        duration_s: f64,
    },

    #[error("missing score vector for video {video_id}, query {query_id}, simple query {target}")]
    MissingScore {
        video_id: String,
        query_id: String,
        target: String,
    },

    #[error("missing entry: {0}")]
    MissingEntry(String),

    #[error("invalid bundle: {0}")]
    InvalidBundle(String),

    #[error("merge would enumerate {count} combinations, above the cap of {cap}")]
    CombinationCap { count: u128, cap: u64 },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingFile { path }
        } else {
            Self::Io { path, source }
        }
    }

    /// True for errors caused by bad arguments rather than bad data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Self::Usage(_) | Self::CombinationCap { .. })
    }
}
