use alloc::string::String;

/// Hard failures of core operations.
///
/// Data-quality problems are not errors; they are collected into a
/// [`ValidationReport`](crate::ValidationReport).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("coordinate out of range: latitude {latitude}, longitude {longitude}")]
    InvalidCoordinate { latitude: f64, longitude: f64 },
    #[error("cell size must be a positive finite number of meters, got {0}")]
    InvalidCellSize(f64),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidTrainFraction(f64),
    #[error("at least two populated regions are required to split, found {0}")]
    TooFewRegions(usize),
    #[error("split leaks {0} region(s) across folds")]
    Leakage(usize),
    #[error("image `{0}` has no resolvable deployment")]
    OrphanImage(String),
    #[error("n_top must be at least 1")]
    InvalidTopN,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("labeling rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("weight cap must be positive, got {0}")]
    InvalidCap(f64),
    #[error("invalid prediction for `{image_id}`: {reason}")]
    InvalidPrediction { image_id: String, reason: String },
    #[error("invalid range box for `{label_id}`: {reason}")]
    InvalidRangeBox { label_id: String, reason: String },
    #[error("invalid timestamp: {0}")]
    InvalidTimestamp(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
