//! Complete simulation protocols: absorption of an incident pulse, spontaneous
//! emission, time-reversed re-absorption, store/release by Stark tuning and
//! emission shaping with a detuning ramp.
//!
//! Each protocol picks its own window from the system timescales and raises
//! the mode count when that window would reach the recurrence time.

use num_complex::Complex64;

use crate::analysis::{
    self, gaussianity, max_qd_population, max_qd_population_until, AbsorptionResult,
    FidelityBreakdown, GaussianFit,
};
use crate::dynamics::{default_time_step, integrate, IntegrateOptions, StateVector, Trajectory};
use crate::error::{Error, Result, Warning};
use crate::model::{discretize_continuum, ContinuumGrid, SystemParams};
use crate::pulse::{
    gaussian_pulse, output_pulse, phase_profile, pulse_to_initial_state, ExtractedPulse,
    OutputGrid, PhaseProfile, PulseEnvelope, TimeGrid, DEFAULT_PHASE_FLOOR,
};
use crate::schedule::{shaping_ramp_schedule, store_release_schedule, DetuningSchedule, RampShape};

type C = Complex64;

/// Windows must stay this far below the recurrence time.
const RECURRENCE_MARGIN: f64 = 1.1;
/// Upper bound for automatic mode-count increases.
pub const MAX_AUTO_MODES: usize = 1 << 18;
/// Emission windows last this many slow amplitude lifetimes past the last
/// schedule change, leaving roughly `exp(-16)` of the population behind.
const EMISSION_LIFETIMES: f64 = 8.0;
/// Intensity floor, relative to the peak, for cropping emitted pulses. The
/// band-limited field has a ringing floor near 1e-9 from the emission onset.
const CROP_FLOOR: f64 = 1e-8;

/// Integration settings shared by all protocols. `None` selects the default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub continuum_stride: usize,
    pub track_norm: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            dt: None,
            t_end: None,
            continuum_stride: 50,
            track_norm: true,
        }
    }
}

impl RunSettings {
    /// Settings for batch use: no continuum snapshots and no norm tracking.
    pub fn lean() -> Self {
        RunSettings {
            continuum_stride: 0,
            track_norm: false,
            ..RunSettings::default()
        }
    }

    fn options(&self, params: &SystemParams, t_end: f64) -> IntegrateOptions {
        IntegrateOptions::new(t_end, self.dt.unwrap_or_else(|| default_time_step(params)))
            .continuum_stride(self.continuum_stride)
            .track_norm(self.track_norm)
    }
}

/// Slowest decay rate of the cavity and dot amplitudes once the continuum is
/// eliminated, for a dot held at `detuning`: the smallest `-Re λ` over the
/// eigenvalues of `[[-iΔc - κ/2, -g], [g, -iΔ - γ]]`.
pub fn slowest_amplitude_rate(params: &SystemParams, detuning: f64) -> f64 {
    let a = C::new(-0.5 * params.kappa, -params.delta_c);
    let d = C::new(-params.gamma, -detuning);
    let half_trace = (a + d) * 0.5;
    let det = a * d + params.g * params.g;
    let root = (half_trace * half_trace - det).sqrt();
    let rates = [-(half_trace + root).re, -(half_trace - root).re];
    rates[0].min(rates[1])
}

/// Window for an incident pulse ending at `pulse_end`:
/// `max(pulse_end + 10/κ_eff, 20/g)` with `κ_eff = min(κ, 4g²/κ)`.
pub fn absorption_window(params: &SystemParams, pulse_end: f64) -> f64 {
    let (g, kappa) = (params.g, params.kappa);
    let kappa_eff = if g > 0.0 { kappa.min(4.0 * g * g / kappa) } else { kappa };
    let settle = if kappa_eff > 0.0 { 10.0 / kappa_eff } else { 0.0 };
    let rabi = if g > 0.0 { 20.0 / g } else { 0.0 };
    (pulse_end + settle).max(rabi)
}

/// Window for emission after the schedule settles, sized from the slow rate.
pub fn emission_window(params: &SystemParams, schedule: &DetuningSchedule) -> Result<f64> {
    let settle = schedule.settle_time();
    let rate = slowest_amplitude_rate(params, schedule.evaluate(settle));
    if !(rate > 1e-12) {
        return Err(Error::param(
            "kappa",
            "the dot never decays: emission needs kappa > 0 and g > 0, or gamma > 0",
        ));
    }
    Ok(settle + EMISSION_LIFETIMES / rate)
}

/// Doubles `n_modes` until the recurrence time clears `window` with margin.
pub fn fit_modes(params: &SystemParams, window: f64, warnings: &mut Vec<Warning>) -> Result<SystemParams> {
    let mut fitted = *params;
    while fitted.recurrence_time() <= RECURRENCE_MARGIN * window {
        if fitted.n_modes >= MAX_AUTO_MODES {
            return Err(Error::RecurrenceGuard {
                window,
                recurrence: fitted.recurrence_time(),
            });
        }
        fitted.n_modes *= 2;
    }
    if fitted.n_modes != params.n_modes {
        warnings.push(Warning::ModesIncreased {
            from: params.n_modes,
            to: fitted.n_modes,
        });
    }
    Ok(fitted)
}

/// Incident wavepacket description.
#[derive(Debug, Clone, PartialEq)]
pub enum InputPulse {
    /// Gaussian of width `w` centred at `t0` (default `5w`).
    Gaussian { w: f64, t0: Option<f64> },
    /// A sampled envelope; it must start at `t >= 0`.
    Sampled(PulseEnvelope),
}

impl InputPulse {
    pub fn gaussian(w: f64) -> Self {
        InputPulse::Gaussian { w, t0: None }
    }

    /// Samples the envelope finely enough for both the injection transform and
    /// later overlap comparisons.
    pub fn envelope(&self, params: &SystemParams) -> Result<PulseEnvelope> {
        match self {
            InputPulse::Gaussian { w, t0 } => {
                let w = *w;
                if !(w > 0.0) || !w.is_finite() {
                    return Err(Error::param("w", format!("pulse width must be > 0, got {w}")));
                }
                let t0 = t0.unwrap_or(5.0 * w);
                if t0 < 5.0 * w * (1.0 - 1e-12) {
                    return Err(Error::param(
                        "t0",
                        format!("pulse centre {t0} leaves less than 5w before t = 0"),
                    ));
                }
                // Aliases of the sampled spectrum must stay 8/w clear of the band.
                let dt = (w / 50.0).min(2.0 * std::f64::consts::PI / (params.omega_b + 8.0 / w));
                let n = (10.0 * w / dt).ceil() as usize;
                let dt = 10.0 * w / n as f64;
                gaussian_pulse(w, t0, TimeGrid::new(t0 - 5.0 * w, dt, n + 1)?)
            }
            InputPulse::Sampled(p) => {
                if p.start() < -1e-9 * p.dt() {
                    return Err(Error::param(
                        "input",
                        format!("sampled pulse starts at t = {} < 0", p.start()),
                    ));
                }
                p.normalized()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AbsorptionRun {
    /// Parameters as simulated, after any automatic mode increase.
    pub params: SystemParams,
    pub grid: ContinuumGrid,
    pub input: PulseEnvelope,
    pub trajectory: Trajectory,
    pub result: AbsorptionResult,
    /// Field leaving the cavity, on the conjugate lattice ending at `T`.
    pub output: ExtractedPulse,
    pub warnings: Vec<Warning>,
}

/// Sends a normalized single-photon pulse at the empty cavity.
pub fn run_absorption(
    params: &SystemParams,
    input: &InputPulse,
    schedule: &DetuningSchedule,
    settings: &RunSettings,
) -> Result<AbsorptionRun> {
    params.validate()?;
    schedule.validate()?;
    let envelope = input.envelope(params)?;
    let t_end = match settings.t_end {
        Some(t) => t,
        None => absorption_window(params, envelope.end()).max(schedule.settle_time()),
    };
    let mut warnings = params.validity_warnings();
    let params = fit_modes(params, t_end, &mut warnings)?;
    let grid = discretize_continuum(&params)?;
    let initial = pulse_to_initial_state(&envelope, &grid)?;
    let trajectory = integrate(&initial, &params, &grid, schedule, &settings.options(&params, t_end))?;
    let output = output_pulse(&trajectory.final_state, &grid, trajectory.t_end(), OutputGrid::Conjugate)?;
    warnings.extend(output.warning.clone());
    Ok(AbsorptionRun {
        params,
        grid,
        input: envelope,
        result: max_qd_population(&trajectory),
        trajectory,
        output,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct EmissionRun {
    pub params: SystemParams,
    pub grid: ContinuumGrid,
    pub trajectory: Trajectory,
    /// Emitted field on the conjugate lattice ending at `T`.
    pub emitted: ExtractedPulse,
    pub warnings: Vec<Warning>,
}

impl EmissionRun {
    /// The emitted pulse cropped to where its intensity is non-negligible.
    pub fn cropped_pulse(&self) -> Result<PulseEnvelope> {
        self.emitted.pulse.trimmed(CROP_FLOOR)
    }
}

/// Spontaneous emission from an initially excited dot.
pub fn run_emission(
    params: &SystemParams,
    schedule: &DetuningSchedule,
    settings: &RunSettings,
) -> Result<EmissionRun> {
    params.validate()?;
    schedule.validate()?;
    let t_end = match settings.t_end {
        Some(t) => t,
        None => emission_window(params, schedule)?,
    };
    let mut warnings = params.validity_warnings();
    let params = fit_modes(params, t_end, &mut warnings)?;
    let grid = discretize_continuum(&params)?;
    let trajectory = integrate(
        &StateVector::excited_dot(grid.len()),
        &params,
        &grid,
        schedule,
        &settings.options(&params, t_end),
    )?;
    let emitted = output_pulse(&trajectory.final_state, &grid, trajectory.t_end(), OutputGrid::Conjugate)?;
    warnings.extend(emitted.warning.clone());
    Ok(EmissionRun {
        params,
        grid,
        trajectory,
        emitted,
        warnings,
    })
}

/// `conj(f(T_e - t))` for an emitted pulse cropped to `[T_s, T_e]`; the result
/// starts at `t = 0` and is normalized.
pub fn time_reversed_input(emitted: &PulseEnvelope) -> Result<PulseEnvelope> {
    let cropped = emitted.trimmed(CROP_FLOOR)?;
    cropped.time_reversed_conjugate(cropped.end()).normalized()
}

#[derive(Debug, Clone)]
pub struct TimeReversalRun {
    pub emission: EmissionRun,
    pub absorption: AbsorptionRun,
}

/// Emits from the excited dot, then sends the time-reversed conjugate of that
/// emission back at the empty system.
pub fn run_time_reversal(params: &SystemParams, settings: &RunSettings) -> Result<TimeReversalRun> {
    let schedule = DetuningSchedule::default();
    let emission = run_emission(params, &schedule, settings)?;
    let reversed = time_reversed_input(&emission.emitted.pulse)?;
    // The reversed pulse lives on the emission lattice, so reuse its grid.
    let absorption = run_absorption(
        &emission.params,
        &InputPulse::Sampled(reversed),
        &schedule,
        &RunSettings {
            t_end: None,
            ..*settings
        },
    )?;
    Ok(TimeReversalRun {
        emission,
        absorption,
    })
}

/// Parameters of the absorb, hold and release protocol. `None` picks the default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreReleaseConfig {
    pub w: f64,
    /// Detuning during the hold; default `30 g`.
    pub delta_far: Option<f64>,
    /// Hold duration; default `10 / κ`.
    pub hold: Option<f64>,
    /// Storage time; default is the time of maximum dot population in a
    /// resonant dry run.
    pub t_store: Option<f64>,
    /// tanh switching timescale; default is an instantaneous switch.
    pub smooth_timescale: Option<f64>,
}

impl StoreReleaseConfig {
    pub fn new(w: f64) -> Self {
        StoreReleaseConfig {
            w,
            delta_far: None,
            hold: None,
            t_store: None,
            smooth_timescale: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreReleaseRun {
    pub params: SystemParams,
    pub grid: ContinuumGrid,
    pub input: PulseEnvelope,
    pub schedule: DetuningSchedule,
    pub delta_far: f64,
    pub t_store: f64,
    pub t_release: f64,
    pub trajectory: Trajectory,
    /// Whole output field over the window.
    pub output: ExtractedPulse,
    /// Output field from `t_release` onward.
    pub released: PulseEnvelope,
    /// Lowest dot population during the hold relative to its value at `t_store`.
    pub hold_retention: f64,
    /// Released norm relative to the dot population at `t_release`.
    pub release_conversion: f64,
    pub fidelity: FidelityBreakdown,
    pub warnings: Vec<Warning>,
}

pub fn run_store_release(
    params: &SystemParams,
    config: &StoreReleaseConfig,
    settings: &RunSettings,
) -> Result<StoreReleaseRun> {
    params.validate()?;
    if !(params.kappa > 0.0) {
        return Err(Error::param("kappa", "store/release needs kappa > 0"));
    }
    let input = InputPulse::gaussian(config.w);
    let delta_far = config.delta_far.unwrap_or(30.0 * params.g);
    let hold = config.hold.unwrap_or(10.0 / params.kappa);
    if !(hold > 0.0) {
        return Err(Error::param("hold", format!("must be > 0, got {hold}")));
    }

    let t_store = match config.t_store {
        Some(t) => t,
        None => {
            let dry = run_absorption(
                params,
                &input,
                &DetuningSchedule::default(),
                &RunSettings {
                    t_end: None,
                    ..RunSettings::lean()
                }
                .with_dt(settings.dt),
            )?;
            dry.result.t_at_max
        }
    };
    let t_release = t_store + hold;
    let schedule = store_release_schedule(t_store, t_release, delta_far, config.smooth_timescale)?;

    let envelope = input.envelope(params)?;
    let t_end = match settings.t_end {
        Some(t) => t,
        None => absorption_window(params, envelope.end()).max(emission_window(params, &schedule)?),
    };
    let mut warnings = params.validity_warnings();
    let params = fit_modes(params, t_end, &mut warnings)?;
    let grid = discretize_continuum(&params)?;
    let initial = pulse_to_initial_state(&envelope, &grid)?;
    let trajectory = integrate(&initial, &params, &grid, &schedule, &settings.options(&params, t_end))?;
    let output = output_pulse(&trajectory.final_state, &grid, trajectory.t_end(), OutputGrid::Conjugate)?;
    warnings.extend(output.warning.clone());

    let absorption = max_qd_population_until(&trajectory, t_store);
    let population = trajectory.dot_population();
    let index = |t: f64| ((t / trajectory.dt).round() as usize).min(population.len() - 1);
    let (i_store, i_release) = (index(t_store), index(t_release));
    let stored = population[i_store];
    let hold_retention = if stored > 0.0 {
        population[i_store..i_release]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            / stored
    } else {
        0.0
    };
    let released = crop_from(&output.pulse, t_release)?;
    let release_conversion = if population[i_release] > 0.0 {
        released.norm() / population[i_release]
    } else {
        0.0
    };
    let fidelity = analysis::store_release_fidelity(absorption.max_population, &envelope, &released)?;
    Ok(StoreReleaseRun {
        params,
        grid,
        input: envelope,
        schedule,
        delta_far,
        t_store,
        t_release,
        trajectory,
        output,
        released,
        hold_retention,
        release_conversion,
        fidelity,
        warnings,
    })
}

impl RunSettings {
    fn with_dt(mut self, dt: Option<f64>) -> Self {
        self.dt = dt;
        self
    }
}

/// Samples at `t >= from`.
fn crop_from(pulse: &PulseEnvelope, from: f64) -> Result<PulseEnvelope> {
    let first = (0..pulse.len())
        .find(|&i| pulse.time(i) >= from)
        .unwrap_or(pulse.len() - 1);
    let first = first.min(pulse.len() - 2);
    PulseEnvelope::new(pulse.time(first), pulse.dt(), pulse.amplitudes()[first..].to_vec())
}

/// A power-law approach to resonance, `Δ(t) = delta_start (1 - t/ramp_end)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampParameters {
    pub delta_start: f64,
    pub ramp_end: f64,
    pub exponent: f64,
}

impl RampParameters {
    pub fn schedule(&self) -> Result<DetuningSchedule> {
        shaping_ramp_schedule(
            self.delta_start,
            self.ramp_end,
            &RampShape::Power {
                exponent: self.exponent,
            },
        )
    }
}

#[derive(Debug, Clone)]
pub struct ShapingRun {
    pub ramp: RampParameters,
    pub schedule: DetuningSchedule,
    pub emission: EmissionRun,
    /// Emitted pulse cropped to its support.
    pub pulse: PulseEnvelope,
    pub fit: GaussianFit,
    pub phase: PhaseProfile,
    /// Max minus min of the unwrapped phase above the 1% intensity floor.
    pub phase_excursion: f64,
    /// Number of emission simulations spent tuning the ramp (0 if given).
    pub evaluations: usize,
}

impl ShapingRun {
    /// Feeds the shaped pulse, chirp included, back at the resonant system.
    pub fn reabsorb(&self, settings: &RunSettings) -> Result<AbsorptionRun> {
        let input = self.pulse.shifted(-self.pulse.start());
        run_absorption(
            &self.emission.params,
            &InputPulse::Sampled(input),
            &DetuningSchedule::default(),
            settings,
        )
    }
}

/// Gaussian-fit residual of the emission under a ramp; failed fits score 1.
fn ramp_residual(params: &SystemParams, ramp: &RampParameters, settings: &RunSettings) -> Result<f64> {
    let run = run_emission(params, &ramp.schedule()?, settings)?;
    Ok(run
        .cropped_pulse()
        .and_then(|p| gaussianity(&p))
        .map_or(1.0, |fit| fit.residual))
}

/// Starting values for the ramp search, in units of `g`.
const SEARCH_DELTA: [f64; 3] = [3.0, 6.0, 12.0];
const SEARCH_END: [f64; 3] = [4.0, 8.0, 12.0];
const SEARCH_EXPONENT: [f64; 3] = [0.5, 1.0, 2.0];
const SEARCH_REFINE_EVALUATIONS: usize = 40;

/// Searches power-law ramps for the most Gaussian emission: a coarse grid
/// followed by a Nelder-Mead refinement in `(ln delta_start, ramp_end, ln exponent)`.
/// Returns the best ramp, its residual and the number of simulations used.
pub fn tune_shaping_ramp(params: &SystemParams, settings: &RunSettings) -> Result<(RampParameters, f64, usize)> {
    if !(params.g > 0.0) {
        return Err(Error::param("g", "ramp tuning needs g > 0"));
    }
    let g = params.g;
    let search = RunSettings {
        dt: Some(settings.dt.unwrap_or(0.1 / params.omega_b)),
        t_end: None,
        ..RunSettings::lean()
    };
    let decode = |x: &[f64; 3]| RampParameters {
        delta_start: x[0].exp() * g,
        ramp_end: x[1].max(0.0) / g,
        exponent: x[2].exp(),
    };
    let mut evaluations = 0;
    let mut score = |x: &[f64; 3]| -> Result<f64> {
        evaluations += 1;
        if x[1] <= 0.0 || decode(x).delta_start >= params.omega_b {
            return Ok(1.0);
        }
        ramp_residual(params, &decode(x), &search)
    };

    let mut best = ([0.0; 3], f64::INFINITY);
    for d in SEARCH_DELTA {
        for e in SEARCH_END {
            for p in SEARCH_EXPONENT {
                let x = [d.ln(), e, p.ln()];
                let r = score(&x)?;
                if r < best.1 {
                    best = (x, r);
                }
            }
        }
    }
    let steps = [0.3, 1.0, 0.3];
    let (x, r) = nelder_mead(&mut score, best.0, best.1, steps, SEARCH_REFINE_EVALUATIONS)?;
    Ok((decode(&x), r, evaluations))
}

fn nelder_mead(
    f: &mut dyn FnMut(&[f64; 3]) -> Result<f64>,
    start: [f64; 3],
    f_start: f64,
    steps: [f64; 3],
    budget: usize,
) -> Result<([f64; 3], f64)> {
    let mut simplex = vec![(start, f_start)];
    for i in 0..3 {
        let mut x = start;
        x[i] += steps[i];
        simplex.push((x, f(&x)?));
    }
    let mut used = 3;
    let combine = |a: &[f64; 3], b: &[f64; 3], t: f64| -> [f64; 3] {
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
    };
    while used < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut centroid = [0.0; 3];
        for (x, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += x[k] / 3.0;
            }
        }
        let worst = simplex[3];
        let reflected = combine(&centroid, &worst.0, -1.0);
        let fr = f(&reflected)?;
        used += 1;
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst.0, -2.0);
            let fe = f(&expanded)?;
            used += 1;
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let contracted = combine(&centroid, &worst.0, 0.5);
            let fc = f(&contracted)?;
            used += 1;
            if fc < worst.1 {
                simplex[3] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for vertex in simplex.iter_mut().skip(1) {
                    let x = combine(&best, &vertex.0, 0.5);
                    *vertex = (x, f(&x)?);
                    used += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(simplex[0])
}

/// Emission under a detuning ramp, tuned for a Gaussian envelope when `ramp`
/// is `None`.
pub fn run_shaping(
    params: &SystemParams,
    ramp: Option<RampParameters>,
    settings: &RunSettings,
) -> Result<ShapingRun> {
    let (ramp, evaluations) = match ramp {
        Some(r) => (r, 0),
        None => {
            let (r, _, n) = tune_shaping_ramp(params, settings)?;
            (r, n)
        }
    };
    let schedule = ramp.schedule()?;
    let emission = run_emission(params, &schedule, settings)?;
    let pulse = emission.cropped_pulse()?;
    let fit = gaussianity(&pulse)?;
    let phase = phase_profile(&pulse, DEFAULT_PHASE_FLOOR)?;
    let phase_excursion = phase.excursion();
    Ok(ShapingRun {
        ramp,
        schedule,
        emission,
        pulse,
        fit,
        phase,
        phase_excursion,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slow_rate_limits() {
        // Weak coupling: the dot decays at the Purcell rate 2g^2/kappa.
        let weak = SystemParams::with_couplings(1.0, 100.0);
        let r = slowest_amplitude_rate(&weak, 0.0);
        assert!((r - 0.02).abs() < 1e-5, "{r}");
        // Strong coupling: both branches decay at kappa/4.
        let strong = SystemParams::with_couplings(5.0, 1.0);
        assert!((slowest_amplitude_rate(&strong, 0.0) - 0.25).abs() < 1e-12);
        // A closed cavity never decays.
        let closed = SystemParams::with_couplings(1.0, 0.0);
        assert!(slowest_amplitude_rate(&closed, 0.0).abs() < 1e-12);
        assert!(emission_window(&closed, &DetuningSchedule::default()).is_err());
    }

    #[test]
    fn windows() {
        let p = SystemParams::default();
        assert_eq!(absorption_window(&p, 10.0), 20.0);
        let weak = SystemParams::with_couplings(1.0, 5.0);
        // kappa_eff = 4/5
        assert!((absorption_window(&weak, 10.0) - 22.5).abs() < 1e-12);
        assert_eq!(emission_window(&p, &DetuningSchedule::default()).unwrap(), 32.0);
    }

    #[test]
    fn modes_double_to_clear_recurrence() {
        let mut warnings = Vec::new();
        let p = SystemParams::default(); // recurrence 160.8
        let same = fit_modes(&p, 100.0, &mut warnings).unwrap();
        assert_eq!(same.n_modes, 1024);
        assert!(warnings.is_empty());
        let raised = fit_modes(&p, 200.0, &mut warnings).unwrap();
        assert_eq!(raised.n_modes, 2048);
        assert_eq!(warnings, vec![Warning::ModesIncreased { from: 1024, to: 2048 }]);
    }

    #[test]
    fn gaussian_input_sampling() {
        let p = SystemParams::default();
        let env = InputPulse::gaussian(1.0).envelope(&p).unwrap();
        assert_eq!(env.start(), 0.0);
        assert!((env.end() - 10.0).abs() < 1e-12);
        assert!((env.norm() - 1.0).abs() < 1e-10);
        assert!(InputPulse::Gaussian { w: 1.0, t0: Some(4.0) }.envelope(&p).is_err());
        let early = PulseEnvelope::new(-1.0, 0.1, vec![C::new(1.0, 0.0); 5]).unwrap();
        assert!(InputPulse::Sampled(early).envelope(&p).is_err());
    }

    /// Overlap between a Gaussian and its reflection off an empty one-sided
    /// cavity, `r(Δ) = exp(-2i atan(2Δ/κ))`, by quadrature over detuning.
    fn all_pass_overlap(w: f64, kappa: f64) -> (f64, f64) {
        let n = 40_001;
        let span = 12.0 / w;
        let d: Vec<f64> = (0..n).map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64).collect();
        let weight: Vec<f64> = d.iter().map(|x| (-x * x * w * w).exp()).collect();
        let total: f64 = weight.iter().sum();
        let at = |tau: f64| {
            d.iter()
                .zip(&weight)
                .map(|(x, s)| C::from_polar(*s, -2.0 * (2.0 * x / kappa).atan() + x * tau))
                .sum::<C>()
                .norm_sqr()
                / (total * total)
        };
        let (mut lo, mut hi) = (0.0, 8.0 / kappa);
        while hi - lo > 1e-6 {
            let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
            if at(m1) < at(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        (at(lo), lo)
    }

    #[test]
    fn empty_cavity_reflects_like_an_all_pass_filter() {
        // The finite band shifts the cavity response by O(1/omega_b), so the
        // error against the continuum oracle must halve when the band doubles.
        let mut errors = Vec::new();
        for (w, omega_b, n_modes) in [(1.0, 20.0, 1024), (1.0, 40.0, 2048), (5.0, 20.0, 1024)] {
            let params = SystemParams {
                g: 0.0,
                omega_b,
                n_modes,
                ..SystemParams::default()
            };
            let run = run_absorption(
                &params,
                &InputPulse::gaussian(w),
                &DetuningSchedule::default(),
                &RunSettings::lean(),
            )
            .unwrap();
            assert_eq!(run.result.max_population, 0.0);
            let o = analysis::overlap_integral(&run.input, &run.output.pulse, true).unwrap();
            let (expect, delay) = all_pass_overlap(w, 1.0);
            assert!((o.shift - delay).abs() < 0.1, "w = {w}: {} vs {delay}", o.shift);
            errors.push(o.value - expect);
        }
        assert!(errors[0] > 0.0 && errors[0] < 6e-3, "{errors:?}");
        assert!((errors[1] / errors[0] - 0.5).abs() < 0.1, "{errors:?}");
        assert!(errors[2].abs() < 1e-4, "{errors:?}");
    }

    #[test]
    fn ramp_search_improves_on_plain_emission() {
        let params = SystemParams {
            omega_b: 10.0,
            n_modes: 512,
            ..SystemParams::default()
        };
        let plain = run_emission(&params, &DetuningSchedule::default(), &RunSettings::lean()).unwrap();
        let plain_residual = gaussianity(&plain.cropped_pulse().unwrap()).unwrap().residual;
        let ramp = RampParameters {
            delta_start: 12.0,
            ramp_end: 12.0,
            exponent: 2.0,
        };
        let shaped = ramp_residual(&params, &ramp, &RunSettings::lean()).unwrap();
        assert!(shaped < 0.05 && shaped < plain_residual / 5.0, "{shaped} vs {plain_residual}");
    }
}
