use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state carries {state} continuum modes but the grid has {grid}")]
    DimensionMismatch { state: usize, grid: usize },

    #[error(
        "simulation window T = {window} is not below the recurrence time 2π/Δω = {recurrence}; \
         increase n_modes or shorten the window"
    )]
    RecurrenceGuard { window: f64, recurrence: f64 },

    #[error("time step {dt} exceeds the stability limit 0.1/ω_B = {limit}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("non-finite amplitude encountered at t = {time} (step {step})")]
    NonFinite { time: f64, step: usize },

    #[error("propagator oracle supports at most {max} continuum modes, got {n_modes}")]
    OracleTooLarge { n_modes: usize, max: usize },

    #[error("propagator oracle requires a constant detuning schedule")]
    NonConstantSchedule,

    #[error(
        "pulse grid extends only {before:.3}w before and {after:.3}w after the pulse center; \
         at least 5w is required on both sides"
    )]
    PulseTruncated { before: f64, after: f64 },

    #[error("pulse spectrum leaks {leakage:.3e} of its norm outside the continuum band (limit {limit:.0e})")]
    SpectralLeakage { leakage: f64, limit: f64 },

    #[error("pulse duration {duration} is not below the recurrence time {recurrence} of the mode lattice")]
    PulseTooLong { duration: f64, recurrence: f64 },

    #[error("pulse has zero norm")]
    ZeroNorm,

    #[error("every sample lies below the intensity floor")]
    AllMasked,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("gaussian fit did not converge: {0}")]
    FitFailed(String),

    #[error("release stage produced an output norm of only {norm:.3e}")]
    NoRelease { norm: f64 },

    #[error("sweep specification: {0}")]
    InvalidSweep(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Conditions that do not stop a run but must be reported alongside its results.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Mode spacing not much smaller than the cavity linewidth.
    CoarseSpacing { spacing: f64, kappa: f64 },
    /// Band not much wider than the cavity linewidth.
    NarrowBand { omega_b: f64, kappa: f64 },
    /// Population still inside the cavity/dot when the output pulse was extracted.
    EmissionIncomplete { residual: f64, threshold: f64 },
    /// The mode count was raised to keep the window below the recurrence time.
    ModesIncreased { from: usize, to: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::CoarseSpacing { spacing, kappa } => write!(
                f,
                "mode spacing {spacing:.4e} is not below kappa/10 = {:.4e}",
                kappa / 10.0
            ),
            Warning::NarrowBand { omega_b, kappa } => write!(
                f,
                "band width 2*omega_b = {:.4e} is not above 10*kappa = {:.4e}",
                2.0 * omega_b,
                10.0 * kappa
            ),
            Warning::EmissionIncomplete {
                residual,
                threshold,
            } => write!(
                f,
                "emission incomplete: residual in-system population {residual:.3e} exceeds {threshold:.0e}"
            ),
            Warning::ModesIncreased { from, to } => {
                write!(f, "n_modes raised from {from} to {to} to clear the recurrence guard")
            }
        }
    }
}
