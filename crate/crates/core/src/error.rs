use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the inspection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image data: {0}")]
    CorruptData(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("region {roi:?} exceeds image bounds {width}x{height}")]
    RoiOutOfBounds {
        roi: crate::imgcore::Roi,
        width: usize,
        height: usize,
    },
    #[error("image {width}x{height} is smaller than the required {min} pixels per side")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("reference image is all zero")]
    ZeroReference,
    #[error("descriptor list is empty")]
    EmptyDescriptorList,
    #[error("need at least 4 matches, got {0}")]
    TooFewMatches(usize),
    #[error("no non-degenerate homography found")]
    DegenerateConfiguration,
    #[error("homography is singular")]
    SingularHomography,
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("training set contains a single class")]
    SingleClassTrainingSet,
    #[error("dataset contains a single class")]
    SingleClassDataset,
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("confusion counts are empty")]
    EmptyCounts,
    #[error("rate {0} is undefined (zero denominator)")]
    UndefinedRate(&'static str),
    #[error("need at least 2 images, got {0}")]
    TooFewImages(usize),
    #[error("time series spans no time")]
    DegenerateTimeSpan,
    #[error("defect magnitude {magnitude} out of range [0, {max}] for {kind}")]
    MagnitudeOutOfRange {
        kind: &'static str,
        magnitude: f64,
        max: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
