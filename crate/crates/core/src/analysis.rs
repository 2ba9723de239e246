//! Scalar figures of merit: absorption maxima, pulse overlaps, emitter
//! profiles, store/release fidelity and gaussianity.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dynamics::{integrate, IntegrateOptions, StateVector, Trajectory};
use crate::error::{Error, Result};
use crate::model::{ContinuumGrid, SystemParams};
use crate::pulse::{output_pulse, ExtractedPulse, OutputGrid, PulseEnvelope, TimeGrid};
use crate::schedule::DetuningSchedule;

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsorptionResult {
    /// `max_t |c_qd(t)|^2`.
    pub max_population: f64,
    pub t_at_max: f64,
    /// Population left in cavity and dot at the end of the window.
    pub residual_at_end: f64,
}

/// Maximum of uniformly sampled values, refined by a parabola through the
/// three samples around the discrete maximum. Returns `(value, time)`.
pub fn refined_peak(values: &[f64], dt: f64) -> (f64, f64) {
    let (i, &vmax) = values
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    if i == 0 || i + 1 >= values.len() {
        return (vmax, i as f64 * dt);
    }
    let (y0, y1, y2) = (values[i - 1], values[i], values[i + 1]);
    let curvature = y0 - 2.0 * y1 + y2;
    if !(curvature < 0.0) {
        return (vmax, i as f64 * dt);
    }
    let offset = 0.5 * (y0 - y2) / curvature;
    let value = y1 - 0.25 * (y0 - y2) * offset;
    (value.max(vmax), (i as f64 + offset) * dt)
}

pub fn max_qd_population(trajectory: &Trajectory) -> AbsorptionResult {
    max_qd_population_until(trajectory, f64::INFINITY)
}

/// Like [`max_qd_population`], restricted to samples with `t <= t_limit`.
pub fn max_qd_population_until(trajectory: &Trajectory, t_limit: f64) -> AbsorptionResult {
    let population = trajectory.dot_population();
    let n = if t_limit.is_finite() {
        ((t_limit / trajectory.dt).floor() as usize + 1).clamp(1, population.len())
    } else {
        population.len()
    };
    let (value, t) = refined_peak(&population[..n], trajectory.dt);
    AbsorptionResult {
        max_population: value.clamp(0.0, 1.0),
        t_at_max: t,
        residual_at_end: trajectory.final_state.in_system_population(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    /// `|∫ f_a*(t - τ) f_b(t) dt|^2 / (∫|f_a|^2 ∫|f_b|^2)`.
    pub value: f64,
    /// The shift `τ` applied to `f_a`.
    pub shift: f64,
}

/// Tolerance on the optimal shift, in time units.
pub const SHIFT_TOLERANCE: f64 = 1e-4;

/// Normalized overlap of two envelopes, optionally maximized over a time shift
/// of `f_a`.
///
/// Both pulses are brought to the coarser of the two sample spacings, which
/// must resolve the content of both, then zero-padded and transformed once; shifted overlaps are then
/// band-limited evaluations of the cross-correlation, which makes the result
/// symmetric under exchanging the arguments.
pub fn overlap_integral(f_a: &PulseEnvelope, f_b: &PulseEnvelope, optimize_shift: bool) -> Result<Overlap> {
    if !(f_a.norm() > 0.0) || !(f_b.norm() > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let (a, b) = common_spacing(f_a, f_b)?;
    let corr = CrossCorrelation::new(&a, &b);
    let denominator = a.norm() * b.norm();
    let overlap_at = |lag: f64| corr.at(lag).norm_sqr() / denominator;

    if !optimize_shift {
        return Ok(Overlap {
            value: overlap_at(corr.lag_for_shift(0.0)).min(1.0),
            shift: 0.0,
        });
    }

    let coarse = corr.integer_lags();
    let (best_lag, _) = coarse
        .iter()
        .fold((0isize, f64::NEG_INFINITY), |(bl, bv), (lag, c)| {
            let v = c.norm_sqr();
            if v > bv {
                (*lag, v)
            } else {
                (bl, bv)
            }
        });
    let tolerance = SHIFT_TOLERANCE / corr.dt;
    let lag = golden_section_max(
        &overlap_at,
        best_lag as f64 - 1.0,
        best_lag as f64 + 1.0,
        tolerance,
    );
    let (lag, value) = [lag, best_lag as f64]
        .into_iter()
        .map(|l| (l, overlap_at(l)))
        .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(Overlap {
        value: value.min(1.0),
        shift: corr.shift_for_lag(lag),
    })
}

fn common_spacing(a: &PulseEnvelope, b: &PulseEnvelope) -> Result<(PulseEnvelope, PulseEnvelope)> {
    let (da, db) = (a.dt(), b.dt());
    if (da - db).abs() <= 1e-9 * da.max(db) {
        return Ok((a.clone(), b.clone()));
    }
    // Sampling the finer pulse at the coarser spacing is exact for band-limited
    // pulses, whereas interpolating the coarser one is not.
    let coarsen = |p: &PulseEnvelope, dt: f64| -> Result<PulseEnvelope> {
        let len = ((p.end() - p.start()) / dt).ceil() as usize + 1;
        Ok(p.resampled(TimeGrid::new(p.start(), dt, len)?))
    };
    if da < db {
        Ok((coarsen(a, db)?, b.clone()))
    } else {
        Ok((a.clone(), coarsen(b, da)?))
    }
}

/// Spectral product `conj(Â) B̂` of two zero-padded envelopes.
struct CrossCorrelation {
    product: Vec<C>,
    dt: f64,
    start_a: f64,
    start_b: f64,
    len_a: usize,
    len_b: usize,
}

impl CrossCorrelation {
    fn new(a: &PulseEnvelope, b: &PulseEnvelope) -> Self {
        let padded = (2 * (a.len() + b.len())).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(padded);
        let transform = |p: &PulseEnvelope| {
            let mut buf = vec![C::new(0.0, 0.0); padded];
            buf[..p.len()].copy_from_slice(p.amplitudes());
            fft.process(&mut buf);
            buf
        };
        let fa = transform(a);
        let fb = transform(b);
        let product = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
        CrossCorrelation {
            product,
            dt: a.dt(),
            start_a: a.start(),
            start_b: b.start(),
            len_a: a.len(),
            len_b: b.len(),
        }
    }

    /// Lag in samples corresponding to shifting `f_a` by `tau`.
    fn lag_for_shift(&self, tau: f64) -> f64 {
        (tau + self.start_a - self.start_b) / self.dt
    }

    fn shift_for_lag(&self, lag: f64) -> f64 {
        lag * self.dt - self.start_a + self.start_b
    }

    /// `∫ f_a*(t - τ) f_b(t) dt` at a fractional sample lag.
    fn at(&self, lag: f64) -> C {
        let l = self.product.len();
        let half = l / 2;
        let mut sum = C::new(0.0, 0.0);
        for (m, p) in self.product.iter().enumerate() {
            let freq = if m < half { m as f64 } else { m as f64 - l as f64 };
            sum += p * C::new(0.0, 2.0 * std::f64::consts::PI * freq * lag / l as f64).exp();
        }
        sum * (self.dt / l as f64)
    }

    /// Correlation at every integer lag where the supports can overlap.
    fn integer_lags(&self) -> Vec<(isize, C)> {
        let l = self.product.len();
        let mut buf = self.product.clone();
        FftPlanner::new().plan_fft_inverse(l).process(&mut buf);
        let scale = self.dt / l as f64;
        (-(self.len_a as isize) + 1..self.len_b as isize)
            .map(|lag| (lag, buf[lag.rem_euclid(l as isize) as usize] * scale))
            .collect()
    }
}

fn golden_section_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Output field of an initially excited dot, evaluated on the conjugate lattice.
pub fn emitter_profile(
    params: &SystemParams,
    grid: &ContinuumGrid,
    schedule: &DetuningSchedule,
    opts: &IntegrateOptions,
) -> Result<ExtractedPulse> {
    let opts = opts.continuum_stride(0).track_norm(false);
    let trajectory = integrate(
        &StateVector::excited_dot(grid.len()),
        params,
        grid,
        schedule,
        &opts,
    )?;
    output_pulse(
        &trajectory.final_state,
        grid,
        trajectory.t_end(),
        OutputGrid::Conjugate,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityBreakdown {
    /// Peak dot population reached while absorbing.
    pub absorption: f64,
    /// Shift-optimized overlap of the input and released pulses.
    pub release_overlap: f64,
    pub release_shift: f64,
    /// `absorption * release_overlap`.
    pub fidelity: f64,
}

/// Smallest released norm for which a fidelity is reported.
pub const MIN_RELEASE_NORM: f64 = 1e-3;

/// Fidelity of an absorb-hold-release cycle, defined as the product of the
/// absorption probability and the overlap of the released pulse with the input.
pub fn store_release_fidelity(
    absorption: f64,
    input: &PulseEnvelope,
    released: &PulseEnvelope,
) -> Result<FidelityBreakdown> {
    if released.norm() < MIN_RELEASE_NORM {
        return Err(Error::NoRelease {
            norm: released.norm(),
        });
    }
    let overlap = overlap_integral(input, released, true)?;
    Ok(FidelityBreakdown {
        absorption,
        release_overlap: overlap.value,
        release_shift: overlap.shift,
        fidelity: absorption * overlap.value,
    })
}

/// Least-squares Gaussian fit to `|f(t)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    /// `∫(|f| - fit)^2 / ∫|f|^2`.
    pub residual: f64,
}

impl GaussianFit {
    pub fn evaluate(&self, t: f64) -> f64 {
        let x = (t - self.center) / self.width;
        self.amplitude * (-0.5 * x * x).exp()
    }
}

pub fn gaussianity(pulse: &PulseEnvelope) -> Result<GaussianFit> {
    let times: Vec<f64> = pulse.times().collect();
    let mags: Vec<f64> = pulse.amplitudes().iter().map(|a| a.norm()).collect();
    let total_sq: f64 = mags.iter().map(|m| m * m).sum();
    if !(total_sq > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let weight: f64 = mags.iter().sum();
    let mean = times.iter().zip(&mags).map(|(t, m)| t * m).sum::<f64>() / weight;
    let var = times
        .iter()
        .zip(&mags)
        .map(|(t, m)| (t - mean).powi(2) * m)
        .sum::<f64>()
        / weight;
    let peak = mags.iter().copied().fold(0.0, f64::max);
    let mut p = [peak, mean, var.sqrt().max(pulse.dt())];

    let cost = |p: &[f64; 3]| -> f64 {
        times
            .iter()
            .zip(&mags)
            .map(|(t, m)| {
                let x = (t - p[1]) / p[2];
                (m - p[0] * (-0.5 * x * x).exp()).powi(2)
            })
            .sum()
    };

    let mut current = cost(&p);
    let mut damping = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (t, m) in times.iter().zip(&mags) {
            let u = (t - p[1]) / p[2];
            let e = (-0.5 * u * u).exp();
            let model = p[0] * e;
            let r = m - model;
            let j = [e, model * u / p[2], model * u * u / p[2]];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut system = jtj;
            for (a, row) in system.iter_mut().enumerate() {
                row[a] += damping * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve3(system, jtr) else {
                damping *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            if trial[2] <= 0.0 || !trial.iter().all(|v| v.is_finite()) {
                damping *= 10.0;
                continue;
            }
            let trial_cost = cost(&trial);
            if trial_cost <= current {
                let small_step = step
                    .iter()
                    .zip(&trial)
                    .all(|(s, v)| s.abs() <= 1e-13 * v.abs().max(pulse.dt()));
                let stalled = current - trial_cost <= 1e-15 * current.max(1e-300);
                p = trial;
                current = trial_cost;
                damping = (damping / 10.0).max(1e-12);
                improved = true;
                if small_step || stalled {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        if converged || !improved {
            converged = true;
            break;
        }
    }
    if !converged || !(p[2] > 0.0) {
        return Err(Error::FitFailed(format!(
            "no convergence from start ({peak}, {mean}, {})",
            var.sqrt()
        )));
    }
    Ok(GaussianFit {
        amplitude: p[0],
        center: p[1],
        width: p[2].abs(),
        residual: current / total_sq,
    })
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Number of strict local maxima of `|f|^2` above `floor * max|f|^2`.
pub fn count_intensity_maxima(pulse: &PulseEnvelope, floor: f64) -> usize {
    let intensity = pulse.intensity();
    let peak = intensity.iter().copied().fold(0.0, f64::max);
    intensity
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > floor * peak)
        .count()
}

/// Exponential decay rate of `|f|^2` over the part of the tail between
/// `upper` and `lower` fractions of the peak, by a log-linear least-squares fit.
pub fn tail_decay_rate(pulse: &PulseEnvelope, upper: f64, lower: f64) -> Option<f64> {
    let intensity = pulse.intensity();
    let i_peak = pulse.peak_index();
    let peak = intensity[i_peak];
    let points: Vec<(f64, f64)> = (i_peak..intensity.len())
        .filter(|&i| intensity[i] <= upper * peak && intensity[i] >= lower * peak)
        .map(|i| (pulse.time(i), intensity[i].ln()))
        .collect();
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx).powi(2))
    });
    Some(-sxy / sxx)
}
