use thiserror::Error;

/// Errors raised across the calibration pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("split part `{part}` is empty although its fraction is positive")]
    EmptyPart { part: &'static str },

    #[error("invalid split fractions: {0}")]
    BadFractions(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("quantile level {0} is outside (0, 1]")]
    BadLevel(f64),

    #[error("weighted distribution has no positive mass")]
    ZeroMass,

    #[error("invalid atom: value {value}, mass {mass}")]
    BadAtom { value: f64, mass: f64 },

    #[error("no scores to calibrate on")]
    EmptyScores,

    #[error("miscoverage level alpha = {0} is outside (0, 1)")]
    BadAlpha(f64),

    #[error("beta = {beta} is not in (0, {upper})")]
    BadBeta { beta: f64, upper: f64 },

    #[error("quantile band is inverted: lo {lo} > hi {hi}")]
    InvalidBand { lo: f64, hi: f64 },

    #[error("class index {index} out of range for {num_classes} classes")]
    BadClassIndex { index: usize, num_classes: usize },

    #[error("probability vector is not on the simplex (sum {0})")]
    NotSimplex(f64),

    #[error("model output does not match the score kind")]
    ShapeMismatch,

    #[error("clean probability {0} is not positive; likelihood ratio undefined")]
    WeightUndefined(f64),

    #[error("corruption labels are all corrupted; no clean class to model")]
    DegenerateLabels,

    #[error("empty input")]
    EmptyInput,

    #[error("quantile level tau = {0} is outside (0, 1)")]
    BadTau(f64),

    #[error("leave-one-out bank of {n} models exceeds the cap of {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("no column is observed in every row")]
    NoObservedColumns,

    #[error("target corruption mean {target} is unreachable (positive fraction {positive})")]
    TargetUnreachable { target: f64, positive: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
