use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ingest error in {path} at byte offset {offset}: {message}")]
    Ingest {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("corpus at {0} contains no question records")]
    EmptyCorpus(PathBuf),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown document id `{0}`")]
    UnknownDocument(String),

    #[error("insufficient candidates: needed {needed}, found {available} (short by {})", needed - available)]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("gateway error for request `{tag}`: {message}")]
    Gateway { tag: String, message: String },

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("substitution impossible: no realistic answer occurs in evidence document `{0}`")]
    SubstitutionImpossible(String),

    #[error(
        "target ratio {target} unreachable with {ignorance} cf_ignorance and {overinclusion} \
         ir_overinclusion candidates (achievable range {min_ratio:.4}..={max_ratio:.4})"
    )]
    UnreachableRatio {
        target: f64,
        ignorance: usize,
        overinclusion: usize,
        min_ratio: f64,
        max_ratio: f64,
    },

    #[error("metric `{0}` is absent: no items to aggregate")]
    AbsentMetric(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error in {path} line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("stage `{stage}` quarantined {quarantined}/{total} records, above the {threshold} limit")]
    QuarantineExceeded {
        stage: String,
        quarantined: usize,
        total: usize,
        threshold: f64,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport-level failures are worth retrying; contract violations are not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Gateway { .. } | Error::Io { .. })
    }
}
