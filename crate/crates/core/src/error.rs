use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar output, got dims {0:?}")]
    NotScalar(Vec<usize>),
    #[error("output is not connected to any parameter requiring gradients")]
    DisconnectedGraph,
    #[error("dropout rate {0} outside [0, 1)")]
    BadRate(f64),
    #[error("insufficient history: frame {needed} requested, track starts at {first}")]
    InsufficientHistory { needed: i64, first: i64 },
    #[error("degenerate bounding box {0:?}")]
    DegenerateBox([f32; 4]),
    #[error("unknown semantic class id {0}")]
    UnknownClass(u32),
    #[error("instance {0} has an empty mask")]
    EmptyMask(u32),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("coordinate {x} outside kept range of camera {camera}")]
    OutOfKeptRange { camera: usize, x: f64 },
    #[error("index {index} out of range for {count} cameras")]
    BadIndex { index: usize, count: usize },
    #[error("feature `{0}` is enabled but missing from the sample")]
    MissingFeature(&'static str),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown ablation variant `{0}`")]
    BadVariant(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}, batch {batch}: {value}")]
    DivergedLoss { epoch: usize, batch: usize, value: f64 },
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("AUC needs both classes present")]
    OneClassOnly,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::DimMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
