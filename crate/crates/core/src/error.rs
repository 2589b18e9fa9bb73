use std::path::PathBuf;

use crate::mask::{GridDims, Pixel};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid dimensions {height}x{width}")]
    InvalidDims { height: usize, width: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimsMismatch { expected: GridDims, found: GridDims },
    #[error("buffer length {found} does not match expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("run-length counts sum to {found}, expected {expected}")]
    RleCountMismatch { expected: u64, found: u64 },
    #[error("malformed run-length encoding: {0}")]
    InvalidRle(String),
    #[error("duplicate identifier {0}")]
    DuplicateId(u64),
    #[error("identifier {0} cannot be used as an instance label")]
    InvalidLabel(u64),
    #[error("instances {first} and {second} overlap at pixel {pixel:?}")]
    Overlap { first: u64, second: u64, pixel: Pixel },
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("no positive affinity entries in the dataset")]
    NoPositives,
    #[error("no negative affinity entries in the dataset")]
    NoNegatives,
    #[error("supervision has no valid entries")]
    NoValidEntries,
    #[error("aggregation mode {0} is not supported here")]
    UnsupportedMode(&'static str),
    #[error("pixels {a:?} and {b:?} are not 8-adjacent in-image neighbours")]
    NotAdjacent { a: Pixel, b: Pixel },
    #[error("region is empty")]
    EmptyRegion,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("instance too large for the exhaustive oracle: {0}")]
    OracleBudget(String),
    #[error("placed {achieved} of {requested} instances before the attempt cap")]
    Placement { requested: usize, achieved: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("annotation {id}: {reason}")]
    Annotation { id: u64, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
