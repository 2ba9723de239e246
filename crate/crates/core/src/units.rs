//! Energy/time conversion through the reduced Planck constant.

use crate::error::{Error, Result};

/// Reduced Planck constant in µeV·ps.
pub const HBAR_UEV_PS: f64 = 658.2119569;

/// Characteristic time `hbar / E` in picoseconds for an energy in µeV.
pub fn uev_to_ps(energy_uev: f64) -> Result<f64> {
    check_positive("energy_uev", energy_uev)?;
    Ok(HBAR_UEV_PS / energy_uev)
}

/// Energy `hbar / t` in µeV for a time in picoseconds.
pub fn ps_to_uev(time_ps: f64) -> Result<f64> {
    check_positive("time_ps", time_ps)?;
    Ok(HBAR_UEV_PS / time_ps)
}

/// Angular frequency in 1/ps for an energy in µeV.
pub fn uev_to_rate_per_ps(energy_uev: f64) -> f64 {
    energy_uev / HBAR_UEV_PS
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {value}")))
    }
}
