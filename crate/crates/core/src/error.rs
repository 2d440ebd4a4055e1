use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("tone frequency {frequency:.6e} rad/s sits on the spin resonance {resonance:.6e} rad/s")]
    Pole { frequency: f64, resonance: f64 },

    #[error("effective frequency |ω_s - ω_b| = {0:.6e} rad/s is below the degeneracy floor")]
    DegenerateFrequency(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integration step {step:.3e} s exceeds the limit {limit:.3e} s for the fastest frequency present")]
    StepTooLarge { step: f64, limit: f64 },

    #[error("oracle duration {duration:.3e} s exceeds the {cap:.3e} s cap")]
    DurationTooLong { duration: f64, cap: f64 },

    #[error("phase jump of {jump:.3} rad between samples {index} and {next}; trajectory is undersampled", next = index + 1)]
    UnwrapAmbiguity { index: usize, jump: f64 },

    #[error("phase series covers {periods:.2} periods, need at least {required}")]
    InsufficientSpan { periods: f64, required: f64 },

    #[error("fit did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("turning point not found within the amplitude sweep (max accumulated phase reached {0:.3} rad)")]
    TurningPointNotFound(f64),

    #[error("only {available} usable bins for the noise floor, need at least {required}")]
    InsufficientBins { available: usize, required: usize },

    #[error("no peak found near {0:.6} Hz")]
    NoPeak(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
