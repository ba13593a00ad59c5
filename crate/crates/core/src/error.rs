use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("disparity is zero (or below the singularity guard)")]
    ZeroDisparity,
    #[error("focal length is zero")]
    ZeroFocalLength,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate camera point: x_cam is zero")]
    DegeneratePoint,
    #[error("mean absolute target is zero")]
    ZeroDenominator,
    #[error("non-positive input: {0}")]
    NonPositiveInput(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("disparity range [{min}, {max}] lies inside the guard band of {guard}")]
    EmptyRangeAfterGuard { min: f64, max: f64, guard: f64 },
    #[error("invalid range for {name}: min {min} > max {max}")]
    InvalidRange {
        name: &'static str,
        min: f64,
        max: f64,
    },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("loss diverged (non-finite) at epoch {0}")]
    DivergenceDetected(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
