use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown IDX magic number {0:#010x}")]
    BadMagic(u32),
    #[error("truncated IDX data: header promises {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("IDX data has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("archive schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("dataset is invalid: {0}")]
    InvalidDataset(String),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("class {class} has {have} samples but {need} clusters were requested")]
    TooFewSamples { class: usize, have: usize, need: usize },
    #[error("matrix is rank deficient (smallest/largest singular value = {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("weights are not orthogonal: |W^T W - I|_F = {deviation:e}")]
    NotOrthogonal { deviation: f64 },
    #[error("binarization transform became singular (condition number {condition:e} at iteration {iteration})")]
    SingularX { condition: f64, iteration: usize },
    #[error("gradient descent did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("logistic regression did not converge (gradient norm {grad_norm:e} after {iterations} iterations)")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("{method} is limited to {limit}, got {actual}")]
    TooLarge { method: &'static str, limit: usize, actual: usize },
    #[error("degenerate annealing schedule: {0}")]
    DegenerateSchedule(String),
    #[error("cannot infer an image shape for columns of length {0}")]
    ShapeUnknown(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image encoding failed: {0}")]
    Image(String),
}

impl Error {
    /// Short stable identifier, used for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadMagic(_) => "BadMagic",
            Error::Truncated { .. } => "Truncated",
            Error::TrailingBytes(_) => "TrailingBytes",
            Error::Io { .. } => "IoError",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::InvalidDataset(_) => "InvalidDataset",
            Error::EmptyClass(_) => "EmptyClass",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::NotOrthogonal { .. } => "NotOrthogonal",
            Error::SingularX { .. } => "SingularX",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::TooLarge { .. } => "TooLarge",
            Error::DegenerateSchedule(_) => "DegenerateSchedule",
            Error::ShapeUnknown(_) => "ShapeUnknown",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::Image(_) => "ImageError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
