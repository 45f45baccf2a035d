use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("jump measure has infinite mass; set a positive truncation level eta")]
    InfiniteMass,

    #[error("rejection sampler accepted {accepted} of {proposals} proposals (rate {rate:.2e}); envelope too loose")]
    LowAcceptance { accepted: u64, proposals: u64, rate: f64 },

    #[error("shift bound violated at s = {s}: |sigma^-1 T_s y| + |y| = {lhs} exceeds {bound}")]
    ShiftBoundViolated { s: f64, lhs: f64, bound: f64 },

    #[error("density vanishes on the ball B(z0, {radius}); infimum is {inf}")]
    DensityVanishesOnBall { radius: f64, inf: f64 },

    #[error("importance weight exp({log_weight:.2}) exceeds exp(30) in replica {replica}")]
    WeightOverflow { replica: u64, log_weight: f64 },

    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),

    #[error("too few samples: {got} < {min}")]
    TooFewSamples { got: usize, min: usize },

    #[error("non-positive value {value} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("missing delta evaluator for bound kind `{0}`")]
    MissingDelta(&'static str),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
