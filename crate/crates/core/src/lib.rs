//! Single-photon absorption and emission by a quantum dot in a leaky cavity.
//!
//! The continuum of external modes is discretized on a finite band and the
//! resulting linear system is integrated with fixed-step RK4. Times are in
//! units of `1/g` unless the caller picks a different scale; only ratios of
//! rates enter the dynamics.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod pulse;
pub mod schedule;
pub mod sweep;
pub mod units;

pub use analysis::{
    gaussianity, max_qd_population, overlap_integral, store_release_fidelity, AbsorptionResult,
    GaussianFit, Overlap,
};
pub use dynamics::{integrate, IntegrateOptions, StateVector, Trajectory};
pub use error::{Error, Result, Warning};
pub use model::{discretize_continuum, ContinuumGrid, SystemParams};
pub use pulse::{
    gaussian_pulse, output_pulse, phase_profile, pulse_to_initial_state, OutputGrid,
    PulseEnvelope, TimeGrid,
};
pub use schedule::{DetuningSchedule, RampShape};
