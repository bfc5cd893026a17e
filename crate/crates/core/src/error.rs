use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can surface.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: expected `timestamp,open,high,low,close`, found `{found}`")]
    MalformedHeader { found: String },
    #[error("row {row}: unparseable timestamp `{value}`")]
    UnparseableTimestamp { row: usize, value: String },
    #[error("file contains no bars")]
    EmptyFile,
    #[error("row {row}: duplicate timestamp {minute} (minutes since epoch)")]
    DuplicateTimestamp { row: usize, minute: i64 },
    #[error("row {row}: bar violates low <= open/close <= high")]
    InconsistentBar { row: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("network error: {0}")]
    Network(String),
    #[error("rate limited by endpoint (retry after {retry_after_secs:?}s)")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("requested range is empty")]
    EmptyRange,

    #[error("calendar: {0}")]
    Calendar(String),
    #[error("asset `{asset_id}` has no bars on trading day {date}")]
    EmptyDay { asset_id: String, date: NaiveDate },

    #[error("label {label} has {count} samples, at least {needed} required")]
    TooFewSamples { label: u8, count: usize, needed: usize },
    #[error("zero price at index {index}; return undefined")]
    ZeroPrice { index: usize },

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("kernel {kernel} larger than padded input {padded}")]
    KernelLargerThanInput { kernel: usize, padded: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown layer kind `{kind}` at byte {offset}")]
    UnknownLayerKind { kind: String, offset: usize },
    #[error("non-positive width at byte {offset}")]
    NonPositiveWidth { offset: usize },
    #[error("layer chain does not compose: {0}")]
    ShapeCompose(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("loss diverged at epoch {epoch} (value {value})")]
    DivergedLoss { epoch: usize, value: f64 },
    #[error("dataset has no {0} split")]
    MissingSplit(&'static str),

    #[error("series of length {len} too short, need {needed}")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("operation not supported for {0}")]
    UnsupportedKind(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} assets, have {count}")]
    TooFewAssets { count: usize, needed: usize },
    #[error("class `{0}` has no values")]
    EmptyClass(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end: 2 for data
    /// problems, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DivergedLoss { .. } => 3,
            _ => 2,
        }
    }
}
