use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite input")]
    NonFinite,
    #[error("inverse overflow at row {row}, coordinate {coord}")]
    InverseOverflow { row: usize, coord: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("degenerate tail: top order statistics are tied")]
    DegenerateTail,
    #[error("need at least {needed} positive values, found {found}")]
    TooFewPositive { needed: usize, found: usize },
    #[error("empty input")]
    Empty,
    #[error("undefined relative error: reference value is zero")]
    UndefinedRelativeError,
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("DDIM requires variance-preserving schedule")]
    NotVariancePreserving,
    #[error("schedule is singular at t = {0}")]
    SingularSchedule(f64),
    #[error("step size underflow at t = {t} (worst point {point})")]
    StepSizeUnderflow { t: f64, point: usize },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
