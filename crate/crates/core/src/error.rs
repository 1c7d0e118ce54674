use std::io;

use thiserror::Error;

use crate::data::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),

    #[error("dimension mismatch ({context}): expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in record '{id}' at row {row}, column {col}")]
    NonFiniteValue { id: String, row: usize, col: usize },

    #[error("score for '{0}' is not finite")]
    NonFiniteScore(String),

    #[error("duplicate trajectory id '{0}'")]
    DuplicateId(String),

    #[error("trajectory '{0}' is unlabeled; fitting requires factual/hallucinated/minor labels")]
    UnlabeledInFitSplit(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("trajectory '{id}' has {length} token(s); at least 2 are required")]
    TrajectoryTooShort { id: String, length: usize },

    #[error("no snapshot pairs to fit")]
    EmptySnapshots,

    #[error("fit set has no {0} trajectories")]
    MissingClass(Label),

    #[error("window [{start}, {end}) spans fewer than 2 tokens")]
    WindowTooShort { start: usize, end: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("scores contain no {0} samples; rates are undefined")]
    SingleClassInput(Label),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "cross-embedding dimension mismatch: model operators are {model}x{model}, \
         target map with model lift implies {target}"
    )]
    CrossDimMismatch { model: usize, target: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable machine-readable name for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedFile(_) => "MalformedFile",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::NonFiniteScore(_) => "NonFiniteScore",
            Error::DuplicateId(_) => "DuplicateId",
            Error::UnlabeledInFitSplit(_) => "UnlabeledInFitSplit",
            Error::EmptyDataset => "EmptyDataset",
            Error::TrajectoryTooShort { .. } => "TrajectoryTooShort",
            Error::EmptySnapshots => "EmptySnapshots",
            Error::MissingClass(_) => "MissingClass",
            Error::WindowTooShort { .. } => "WindowTooShort",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::SingleClassInput(_) => "SingleClassInput",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::CrossDimMismatch { .. } => "CrossDimMismatch",
            Error::Io(_) => "Io",
        }
    }

    /// True when the error is caused by bad input rather than a numerical
    /// or internal failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::EmptySnapshots)
    }
}
