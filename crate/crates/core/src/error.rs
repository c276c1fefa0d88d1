use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
    #[error("invalid attribute name `{0}`")]
    InvalidName(String),
    #[error("duplicate group `{0}`")]
    DuplicateGroup(String),
    #[error("group `{0}` is exhaustive but has no members")]
    EmptyExhaustiveGroup(String),
    #[error("rule lists `{0}` more than once")]
    DuplicateMember(String),
    #[error("inline attribute declaration conflicts with the supplied schema: {0}")]
    SchemaConflict(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("value {value} at row {row}, column {col} is outside [0, 1]")]
    ValueOutOfRange { row: usize, col: usize, value: f64 },
    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),

    #[error("rule set has no exclusive groups")]
    NoExclusiveGroups,
    #[error("rule set has no exhaustive groups")]
    NoExhaustiveGroups,
    #[error("rule set yields no condition groups")]
    NoConditionGroups,

    #[error("no attribute has positive or negative support")]
    NoSupport,
    #[error("compensation needs confidence scores, got binary labels")]
    MissingConfidences,
    #[error("probability {0} outside (0, 1)")]
    Domain(f64),

    #[error("rules admit no consistent assignment")]
    UnsatisfiableRules,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by the input's content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                msg: format!("{other:?}"),
            },
        }
    }
}
