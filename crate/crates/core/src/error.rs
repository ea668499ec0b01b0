use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular (pivot {pivot:e} below tolerance at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("matrix has row rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point lies on hyperplane {0}")]
    OnHyperplane(usize),
    #[error("point lies on the boundary of ReLU unit {unit} in layer {layer}")]
    OnBoundary { layer: usize, unit: usize },
    #[error("degenerate column pair: {0}")]
    DegeneratePair(String),
    #[error("cell crossing did not converge (scale exceeded {0:e})")]
    NoConvergence(f64),
    #[error("count overflows 128-bit integer")]
    Overflow,
    #[error("input segment is degenerate (x == y)")]
    DegenerateSegment,
    #[error("finite-difference probe changed the activation pattern at subset coordinate {0}")]
    BoundaryTooClose(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("data format: {0}")]
    DataFormat(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("all {restarts} restarts failed ({summary})")]
    AllRestartsFailed { restarts: usize, summary: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
