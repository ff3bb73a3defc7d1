use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("encoded id is the IGNORE sentinel")]
    IgnoreSentinel,
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {0}")]
    BadMagic(PathBuf),
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("non-finite value at element {0}")]
    NonFiniteValue(usize),
    #[error("unknown class id {0}")]
    UnknownClass(u16),
    #[error("invalid class table: {0}")]
    InvalidClassTable(String),
    #[error("bounding box {0:?} is invalid for a {1}x{2} image")]
    InvalidBox([u32; 4], u32, u32),
    #[error("bounding box covers the whole image; no definite background")]
    DegenerateBox,
    #[error("proposal set is empty")]
    EmptyProposalSet,
    #[error("heatmap for class {0} is identically zero")]
    ZeroHeatmap(u16),
    #[error("class {0} is not in the tag set")]
    ClassNotTagged(u16),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("exhaustive search space of {0} labelings is too large")]
    TooLarge(f64),
    #[error("detection set is empty")]
    NoDetections,
    #[error("oracle scoring requires ground truth")]
    MissingGroundTruth,
    #[error("no labelled pixels; loss undefined")]
    EmptySupport,
    #[error("no matching file for {0}")]
    MissingPair(String),
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn extent(a: (usize, usize), b: (usize, usize)) -> Self {
        Error::ExtentMismatch(format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1))
    }
}
