use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("empty matrix ({rows}x{cols})")]
    EmptyShape { rows: usize, cols: usize },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("basis is singular to tolerance: pivot {pivot} below threshold")]
    SingularBasis { pivot: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid period {0}: must be infinite or greater than 1")]
    InvalidPeriod(f64),

    #[error("fixed mode {mode} out of range 1..={max}")]
    ModeOutOfRange { mode: usize, max: usize },

    #[error("{classes} classes need more than the {dim} available basis signals")]
    InsufficientBasis { classes: usize, dim: usize },

    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("wrong IDX magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("label {label} at index {index} is not a digit")]
    CorruptLabels { index: usize, label: u8 },

    #[error("raw pixel value {value} at index {index} outside [0, 255]")]
    PixelOutOfRange { index: usize, value: f64 },

    #[error("non-finite gradient in parameter {param}, slot {slot}")]
    NonFiniteGradient { param: usize, slot: usize },

    #[error("trainable eigenvalue {index} left the open unit interval: {value}")]
    EigenvalueBound { index: usize, value: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-linear segment norm {norm:e} did not fall below {threshold:e}")]
    ConvergenceNotReached { norm: f64, threshold: f64 },

    #[error("trajectory has {len} states, need at least {required}")]
    TrajectoryTooShort { len: usize, required: usize },

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("data missing: {0}")]
    DataMissing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable category name reported by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DataMissing(_)
            | Error::WrongMagic { .. }
            | Error::Truncated { .. }
            | Error::CorruptLabels { .. }
            | Error::PixelOutOfRange { .. }
            | Error::EmptyDataset => "DATA_MISSING",
            Error::CheckpointCorrupt(_) => "CKPT_CORRUPT",
            Error::ConvergenceNotReached { .. } => "GAP_TOO_SMALL",
            Error::SingularBasis { .. } => "SINGULAR_BASIS",
            Error::NonFiniteGradient { .. } | Error::EigenvalueBound { .. } => "NONFINITE_GRAD",
            _ => "CONFIG_INVALID",
        }
    }
}
