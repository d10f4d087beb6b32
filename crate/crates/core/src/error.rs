use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GrowError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GrowError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("incompatible architectures: {0}")]
    IncompatibleArch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("stage {0} is already at its target block count")]
    StageSaturated(usize),
    #[error("preceding block is a downsample block; use random initialization")]
    DownsamplePreceding,
    #[error("moment ensemble has not received any update")]
    EnsembleNotUpdated,
    #[error("no growth needed (seed equals target)")]
    NoGrowth,
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("growth budget not exhausted at the final epoch ({remaining} blocks left)")]
    BudgetUnexhausted { remaining: usize },
    #[error("{}: bad magic number {found:#010x} (expected {expected:#010x})", path.display())]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{}: truncated file", path.display())]
    Truncated {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sample count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GrowError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GrowError::Io {
            path: path.into(),
            source,
        }
    }
}
