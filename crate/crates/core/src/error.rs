use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cloud size mismatch: {left} vs {right} particles")]
    SizeMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("exact assignment supports at most {max} particles (got {n}); use w2_sliced")]
    TooManyParticles { n: usize, max: usize },

    #[error("step {step} exceeds the explicit stability bound {bound}")]
    StepAboveStability { step: f64, bound: f64 },

    #[error("non-finite state at particle {particle}, t = {t}")]
    NonFinite { particle: usize, t: f64 },

    #[error("window [{start}, {end}) is not aligned to the fine step {step}")]
    MisalignedWindow { start: f64, end: f64, step: f64 },

    #[error("block length {delta} is not a multiple of the recorded spacing {spacing}")]
    BlockNotAligned { delta: f64, spacing: f64 },

    #[error("model '{0}' has no analytic averaged drift")]
    MissingAnalyticBbar(String),

    #[error("model '{0}' has no analytic corrector")]
    MissingAnalyticPhi(String),

    #[error("an averaged drift value must be supplied")]
    MissingBbar,

    #[error("value {value} at index {index} is not positive; cannot take its logarithm")]
    NonPositive { index: usize, value: f64 },

    #[error("dissipativity violated: {0}")]
    DissipativityViolated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}
