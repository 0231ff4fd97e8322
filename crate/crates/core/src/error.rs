use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("lookup: index {index} at position {position} is outside the table of {rows} rows")]
    Lookup { position: usize, index: usize, rows: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("train-mode batch norm needs at least 2 {what}, got {count}")]
    DegenerateStatistics { what: &'static str, count: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value produced by operation #{op_index} ({op})")]
    NonFinite { op_index: usize, op: &'static str },

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("unsupported depth {0}; valid depths are 9, 17, 29, 49")]
    UnsupportedDepth(usize),

    #[error("{path}:{line}: {message}")]
    Ingest { path: PathBuf, line: u64, message: String },

    #[error("{path}:{line}: class {class} outside [1, {n_classes}]")]
    LabelRange {
        path: PathBuf,
        line: u64,
        class: i64,
        n_classes: usize,
    },

    #[error("no reference row for {family} depth {depth}")]
    MissingReference { family: String, depth: usize },

    #[error("golden table line {line}: {message}")]
    GoldenFormat { line: usize, message: String },

    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("checkpoint: file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint: array #{index} has {found} values, model expects {expected}")]
    LengthMismatch { index: usize, expected: usize, found: u64 },

    #[error("checkpoint: invalid architecture header: {0}")]
    InvalidHeader(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
