use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data or an unreachable provider.
    Data,
    /// A model or bundle that is internally inconsistent or incompatible with the input.
    Model,
}

#[derive(Debug, Error)]
pub enum Error {
    // ---- ingestion ----
    #[error("malformed trajectory document: {0}")]
    MalformedDocument(String),
    #[error("annotated breach step {step} is out of range for {turns} turns")]
    AnnotationOutOfRange { step: i64, turns: usize },
    #[error("breach agent `{annotated}` does not match agent `{acting}` acting at step {step}")]
    AgentMismatch {
        step: usize,
        annotated: String,
        acting: String,
    },
    #[error("no trajectory files found in {0}")]
    EmptyDataset(PathBuf),
    #[error("{} trajectory file(s) failed to load:\n{}", .0.len(), format_file_errors(.0))]
    DatasetErrors(Vec<(PathBuf, String)>),
    #[error("need at least 2 trajectories to split, got {0}")]
    TooFewTrajectories(usize),

    // ---- numerics ----
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("parameter/gradient shape mismatch")]
    ShapeMismatch,
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,
    #[error("projection output has zero norm")]
    ZeroOutput,
    #[error("empty input list")]
    EmptyList,

    // ---- embedding ----
    #[error("task text is empty")]
    EmptyTask,
    #[error("prompt has no tokens")]
    EmptyPrompt,
    #[error("bad magic bytes, not a {0} file")]
    BadMagic(&'static str),
    #[error("unsupported {format} version {version}")]
    VersionUnsupported { format: &'static str, version: u16 },
    #[error("file truncated: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("matrix dimensions overflow")]
    DimensionOverflow,
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding protocol error: {0}")]
    ProtocolError(String),
    #[error("no precomputed states for `{0}`")]
    MissingStates(String),

    // ---- training / model ----
    #[error("need at least 2 annotated failure trajectories for triplet mining, got {0}")]
    InsufficientFailures(usize),
    #[error("a random negative was required but no success deltas exist")]
    NoSuccessDeltas,
    #[error("need at least {needed} distinct points, got {distinct}")]
    TooFewPoints { needed: usize, distinct: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training labels contain a single class")]
    SingleClassCorpus,
    #[error("need at least 10 risk samples for calibration, got {0}")]
    TooFewSamples(usize),
    #[error("trajectory `{0}` has no breach annotation")]
    UnannotatedTrajectory(String),
    #[error("no evaluation rows")]
    EmptyRows,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // ---- bundle ----
    #[error("bundle checksum mismatch")]
    ChecksumMismatch,
    #[error("inconsistent bundle dimensions: {0}")]
    InconsistentDimensions(String),
    #[error("provider mode does not match bundle: {0}")]
    ModeMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_file_errors(errors: &[(PathBuf, String)]) -> String {
    errors
        .iter()
        .map(|(p, e)| format!("  {}: {e}", p.display()))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DimensionMismatch { .. }
            | Error::ShapeMismatch
            | Error::ChecksumMismatch
            | Error::InconsistentDimensions(_)
            | Error::ModeMismatch(_)
            | Error::VersionUnsupported { .. } => ErrorClass::Model,
            _ => ErrorClass::Data,
        }
    }
}
