//! Run configuration: one TOML file per run, every field optional.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qdc_core::experiments::{InputPulse, RampParameters, StoreReleaseConfig};
use qdc_core::schedule::{Knot, Switch};
use qdc_core::sweep::SweepSpec;
use qdc_core::units::uev_to_rate_per_ps;
use qdc_core::{DetuningSchedule, SystemParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Command this config was written for; checked against the invoked one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default)]
    pub units: UnitsSection,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub schedule: DetuningSchedule,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub store_release: StoreReleaseSection,
    #[serde(default)]
    pub shape: ShapeSection,
    #[serde(default = "SweepSpec::fig2a")]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            units: UnitsSection::default(),
            system: SystemSection::default(),
            pulse: PulseSection::default(),
            schedule: DetuningSchedule::default(),
            integrator: IntegratorSection::default(),
            store_release: StoreReleaseSection::default(),
            shape: ShapeSection::default(),
            sweep: SweepSpec::fig2a(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSystem {
    /// Rates and times in any consistent unit, usually `g = 1` or `kappa = 1`.
    #[default]
    Natural,
    /// Energies (rates, detunings) in ueV, times in ps.
    UevPs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsSection {
    #[serde(default)]
    pub system: UnitSystem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default = "one")]
    pub g: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub delta_c: f64,
    /// Default `20 kappa`, or `20 g` for a closed cavity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_modes: Option<usize>,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            g: 1.0,
            kappa: 1.0,
            gamma: 0.0,
            delta_c: 0.0,
            omega_b: None,
            n_modes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    #[serde(default = "one")]
    pub w: f64,
    /// Pulse centre; default `5 w`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
}

impl Default for PulseSection {
    fn default() -> Self {
        PulseSection { w: 1.0, t0: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Steps between continuum snapshots in the mode map.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Every this many modes appear in the mode map.
    #[serde(default = "default_mode_stride")]
    pub mode_stride: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            dt: None,
            t_end: None,
            stride: default_stride(),
            mode_stride: default_mode_stride(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreReleaseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_store: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth_timescale: Option<f64>,
}

/// A power-law ramp; leave all three out to search for one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Phase is left blank where `|f|^2` is below this fraction of its peak.
    #[serde(default = "default_phase_floor")]
    pub phase_floor: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            phase_floor: default_phase_floor(),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_stride() -> usize {
    200
}

fn default_mode_stride() -> usize {
    4
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_phase_floor() -> f64 {
    qdc_core::pulse::DEFAULT_PHASE_FLOOR
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.system;
        for (name, v) in [("g", s.g), ("kappa", s.kappa), ("gamma", s.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                bail!("system.{name} must be finite and >= 0, got {v}");
            }
        }
        if !s.delta_c.is_finite() {
            bail!("system.delta_c must be finite");
        }
        if let Some(b) = s.omega_b {
            if !(b > 0.0) || !b.is_finite() {
                bail!("system.omega_b must be > 0, got {b}");
            }
        }
        if let Some(n) = s.n_modes {
            if n < 2 || n % 2 != 0 {
                bail!("system.n_modes must be even and >= 2, got {n}");
            }
        }
        if !(self.pulse.w > 0.0) || !self.pulse.w.is_finite() {
            bail!("pulse.w must be > 0, got {}", self.pulse.w);
        }
        let i = &self.integrator;
        for (name, v) in [("dt", i.dt), ("t_end", i.t_end)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    bail!("integrator.{name} must be > 0, got {v}");
                }
            }
        }
        if i.mode_stride == 0 {
            bail!("integrator.mode_stride must be >= 1");
        }
        let h = &self.shape;
        let given = [h.delta_start, h.ramp_end, h.exponent].iter().filter(|v| v.is_some()).count();
        if given != 0 && given != 3 {
            bail!("shape needs all of delta_start, ramp_end and exponent, or none of them");
        }
        if !(self.output.phase_floor >= 0.0 && self.output.phase_floor < 1.0) {
            bail!("output.phase_floor must lie in [0, 1), got {}", self.output.phase_floor);
        }
        self.schedule.validate().context("schedule")?;
        self.sweep.validate().context("sweep")?;
        Ok(())
    }

    /// The same run with every energy turned into a rate and every time left
    /// as is, so that the simulation sees one consistent unit system.
    pub fn to_natural(&self) -> RunConfig {
        if self.units.system == UnitSystem::Natural {
            return self.clone();
        }
        let e = uev_to_rate_per_ps;
        let s = &self.system;
        RunConfig {
            units: UnitsSection::default(),
            system: SystemSection {
                g: e(s.g),
                kappa: e(s.kappa),
                gamma: e(s.gamma),
                delta_c: e(s.delta_c),
                omega_b: s.omega_b.map(e),
                n_modes: s.n_modes,
            },
            schedule: map_schedule(&self.schedule, e),
            store_release: StoreReleaseSection {
                delta_far: self.store_release.delta_far.map(e),
                ..self.store_release
            },
            shape: ShapeSection {
                delta_start: self.shape.delta_start.map(e),
                ..self.shape
            },
            ..self.clone()
        }
    }

    pub fn params(&self) -> SystemParams {
        let s = &self.system;
        let base = SystemParams::with_couplings(s.g, s.kappa);
        SystemParams {
            gamma: s.gamma,
            delta_c: s.delta_c,
            omega_b: s.omega_b.unwrap_or(base.omega_b),
            n_modes: s.n_modes.unwrap_or(base.n_modes),
            ..base
        }
    }

    pub fn input(&self) -> InputPulse {
        InputPulse::Gaussian {
            w: self.pulse.w,
            t0: self.pulse.t0,
        }
    }

    pub fn store_release_config(&self) -> StoreReleaseConfig {
        let s = &self.store_release;
        StoreReleaseConfig {
            w: self.pulse.w,
            delta_far: s.delta_far,
            hold: s.hold,
            t_store: s.t_store,
            smooth_timescale: s.smooth_timescale,
        }
    }

    pub fn ramp(&self) -> Option<RampParameters> {
        let h = &self.shape;
        Some(RampParameters {
            delta_start: h.delta_start?,
            ramp_end: h.ramp_end?,
            exponent: h.exponent?,
        })
    }

    /// Echoes the resolved simulation parameters back into the config.
    pub fn resolve_system(&mut self, params: &SystemParams) {
        self.system = SystemSection {
            g: params.g,
            kappa: params.kappa,
            gamma: params.gamma,
            delta_c: params.delta_c,
            omega_b: Some(params.omega_b),
            n_modes: Some(params.n_modes),
        };
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

fn map_schedule(schedule: &DetuningSchedule, f: impl Fn(f64) -> f64) -> DetuningSchedule {
    let switches = |s: &[Switch]| -> Vec<Switch> {
        s.iter()
            .map(|s| Switch {
                time: s.time,
                value: f(s.value),
            })
            .collect()
    };
    match schedule {
        DetuningSchedule::Constant { value } => DetuningSchedule::Constant { value: f(*value) },
        DetuningSchedule::Step { initial, switches: s } => DetuningSchedule::Step {
            initial: f(*initial),
            switches: switches(s),
        },
        DetuningSchedule::SmoothStep {
            initial,
            switches: s,
            timescale,
        } => DetuningSchedule::SmoothStep {
            initial: f(*initial),
            switches: switches(s),
            timescale: *timescale,
        },
        DetuningSchedule::PiecewiseLinear { knots } => DetuningSchedule::PiecewiseLinear {
            knots: knots
                .iter()
                .map(|k| Knot {
                    time: k.time,
                    value: f(k.value),
                })
                .collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[system]\nkapa = 2.0\n").unwrap_err();
        let text = format!("{err:#}");
        assert!(text.contains("kapa"), "{text}");
        assert!(text.contains("line 2"), "{text}");
    }

    #[test]
    fn negative_kappa_names_the_field() {
        let err = RunConfig::parse("[system]\nkappa = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("system.kappa"));
    }

    #[test]
    fn partial_ramp_is_rejected() {
        assert!(RunConfig::parse("[shape]\ndelta_start = 3.0\n").is_err());
    }

    #[test]
    fn schedule_round_trips() {
        let text = "[schedule]\nkind = \"step\"\ninitial = 0.0\nswitches = [{ time = 2.0, value = 30.0 }]\n";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.schedule.evaluate(3.0), 30.0);
        assert_eq!(RunConfig::parse(&config.to_toml().unwrap()).unwrap(), config);
    }

    #[test]
    fn physical_units_become_rates_per_ps() {
        let config = RunConfig::parse(
            "[units]\nsystem = \"uev_ps\"\n[system]\ng = 85.0\nkappa = 85.0\n[pulse]\nw = 7.74\n",
        )
        .unwrap();
        let natural = config.to_natural();
        assert!((natural.system.g * 7.7437 - 1.0).abs() < 1e-4);
        assert_eq!(natural.pulse.w, 7.74);
        assert_eq!(natural.units.system, UnitSystem::Natural);
    }
}
