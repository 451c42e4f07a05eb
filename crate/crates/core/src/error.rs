use std::path::PathBuf;

use thiserror::Error;

use crate::volume::Tissue;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: file not found", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: payload is {actual} bytes, header implies {expected}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{}: non-finite value at voxel {index}", path.display())]
    NonFinite { path: PathBuf, index: usize },

    #[error("{}: unsupported dtype {dtype:?} (expected {expected:?})", path.display())]
    UnsupportedDtype {
        path: PathBuf,
        dtype: String,
        expected: &'static str,
    },

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate subject_id {0:?}")]
    DuplicateSubject(String),

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("empty voxel selection")]
    EmptySelection,

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: [usize; 3],
        actual: [usize; 3],
    },

    #[error("spacing mismatch: expected {expected:?}, got {actual:?}")]
    SpacingMismatch {
        expected: [f64; 3],
        actual: [f64; 3],
    },

    #[error("illegal label code {code} at voxel {index}")]
    IllegalLabel { code: u8, index: usize },

    #[error("subject {subject:?}: {stage} segmentation failed: {reason}")]
    SegmentationFailed {
        subject: String,
        stage: &'static str,
        reason: String,
    },

    #[error("subject {subject:?}: no {tissue} voxels for anchor extraction")]
    MissingTissue { subject: String, tissue: Tissue },

    #[error("degenerate anchors: {first} and {second} share intensity {value}")]
    DegenerateAnchors {
        first: Tissue,
        second: Tissue,
        value: f64,
    },

    #[error("non-monotone model: {lower} maps to {lower_m} but {upper} maps to {upper_m}")]
    NonMonotoneModel {
        lower: Tissue,
        upper: Tissue,
        lower_m: f64,
        upper_m: f64,
    },

    #[error("unsupported model format_version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("unknown {kind} strategy {name:?} (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("subject {subject:?}: missing {field}")]
    MissingMetadata {
        subject: String,
        field: &'static str,
    },

    #[error("subject coverage mismatch: {0}")]
    CoverageMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::MissingFile(_))
    }
}
