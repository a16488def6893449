use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has (near-)zero norm")]
    ZeroRow(usize),
    #[error("matrix has no rows")]
    EmptyMatrix,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("need at least {needed} samples to fit whitening, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("covariance is rank deficient (largest eigenvalue {0:e})")]
    RankDeficient(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("eigenvalue spectrum is empty")]
    EmptySpectrum,

    #[error("rows are not unit-norm (row {row} has norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("angle {0} outside [0, pi]")]
    ThetaOutOfRange(f64),
    #[error("sample too small: {got} < {needed}")]
    SampleTooSmall { needed: usize, got: usize },
    #[error("bad bin count {0}")]
    BadBins(usize),

    #[error("teacher list is empty")]
    EmptyTeacherList,
    #[error("unknown fusion strategy `{0}`")]
    UnknownStrategy(String),

    #[error("target distribution has a non-positive entry at ({0}, {1})")]
    NonPositiveQ(usize, usize),
    #[error("invalid schedule: step {step}, total {total}")]
    BadSchedule { step: usize, total: usize },
    #[error("not enough labels with two or more items to draw {needed} pairs (have {available})")]
    InsufficientPairs { needed: usize, available: usize },
    #[error("loss became non-finite at step {0}")]
    NonFiniteLoss(usize),
    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("query {0} has no relevant items")]
    NoRelevant(usize),
    #[error("history is empty")]
    EmptyHistory,

    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
