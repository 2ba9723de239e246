//! Physical parameters and the discretized waveguide continuum.
//!
//! All rates are angular frequencies in the simulation's natural unit, which
//! by convention is the cavity decay rate (`kappa = 1`). Conversions to
//! laboratory units live in [`crate::units`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};

/// Constants of the dot-cavity-waveguide model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Dot-cavity coupling.
    pub g: f64,
    /// Cavity energy-decay rate into the waveguide.
    pub kappa: f64,
    /// Dot amplitude decay rate.
    #[serde(default)]
    pub gamma: f64,
    /// Cavity detuning from the rotating frame.
    #[serde(default)]
    pub delta_c: f64,
    /// Half-width of the discretized band.
    pub omega_b: f64,
    /// Number of continuum modes.
    pub n_modes: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            g: 1.0,
            kappa: 1.0,
            gamma: 0.0,
            delta_c: 0.0,
            omega_b: 20.0,
            n_modes: 1024,
        }
    }
}

impl SystemParams {
    /// Default band for the given couplings: `omega_b = 20 * kappa`, or `20 * g`
    /// when the cavity is closed.
    pub fn with_couplings(g: f64, kappa: f64) -> Self {
        let scale = if kappa > 0.0 { kappa } else { g.max(1.0) };
        SystemParams {
            g,
            kappa,
            omega_b: 20.0 * scale,
            ..SystemParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = [("g", self.g), ("kappa", self.kappa), ("gamma", self.gamma)];
        for (name, value) in non_negative {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::param(name, format!("must be finite and >= 0, got {value}")));
            }
        }
        if !self.delta_c.is_finite() {
            return Err(Error::param("delta_c", "must be finite"));
        }
        if !(self.omega_b > 0.0) || !self.omega_b.is_finite() {
            return Err(Error::param(
                "omega_b",
                format!("must be finite and > 0, got {}", self.omega_b),
            ));
        }
        if self.n_modes < 2 {
            return Err(Error::param(
                "n_modes",
                format!("must be >= 2, got {}", self.n_modes),
            ));
        }
        Ok(())
    }

    pub fn mode_spacing(&self) -> f64 {
        2.0 * self.omega_b / self.n_modes as f64
    }

    /// Artificial revival period of the discretized continuum.
    pub fn recurrence_time(&self) -> f64 {
        2.0 * PI / self.mode_spacing()
    }

    /// Checks the quasi-continuum conditions: spacing well below and band well
    /// above the cavity linewidth. Violations are warnings, not errors.
    pub fn validity_warnings(&self) -> Vec<Warning> {
        let mut warnings = Vec::new();
        if self.kappa > 0.0 {
            let spacing = self.mode_spacing();
            if spacing >= self.kappa / 10.0 {
                warnings.push(Warning::CoarseSpacing {
                    spacing,
                    kappa: self.kappa,
                });
            }
            if 2.0 * self.omega_b <= 10.0 * self.kappa {
                warnings.push(Warning::NarrowBand {
                    omega_b: self.omega_b,
                    kappa: self.kappa,
                });
            }
        }
        warnings
    }
}

/// Uniform midpoint discretization of the band `(-omega_b, omega_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumGrid {
    detunings: Vec<f64>,
    mode_spacing: f64,
    kappa_prime: f64,
    omega_b: f64,
}

impl ContinuumGrid {
    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    pub fn mode_spacing(&self) -> f64 {
        self.mode_spacing
    }

    /// Per-mode cavity coupling `sqrt(kappa * dw / 2pi)`.
    pub fn kappa_prime(&self) -> f64 {
        self.kappa_prime
    }

    pub fn omega_b(&self) -> f64 {
        self.omega_b
    }

    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }

    pub fn recurrence_time(&self) -> f64 {
        2.0 * PI / self.mode_spacing
    }

    /// The decay rate recovered from the discretized coupling, `2pi kappa'^2 / dw`.
    pub fn reconstructed_kappa(&self) -> f64 {
        2.0 * PI * self.kappa_prime * self.kappa_prime / self.mode_spacing
    }
}

/// Places `n_modes` modes at `-omega_b + (k - 1/2) dw`, `k = 1..N`.
pub fn discretize_continuum(params: &SystemParams) -> Result<ContinuumGrid> {
    params.validate()?;
    let n = params.n_modes;
    let spacing = params.mode_spacing();
    let detunings = (0..n)
        .map(|k| -params.omega_b + (k as f64 + 0.5) * spacing)
        .collect();
    Ok(ContinuumGrid {
        detunings,
        mode_spacing: spacing,
        kappa_prime: (params.kappa * spacing / (2.0 * PI)).sqrt(),
        omega_b: params.omega_b,
    })
}
