//! Single-photon wavepackets: construction, injection into the continuum,
//! extraction of the emitted field, and phase analysis.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dynamics::StateVector;
use crate::error::{Error, Result, Warning};
use crate::model::ContinuumGrid;

type C = Complex64;

/// Uniform sample times `start + i * dt`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(start: f64, dt: f64, len: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !start.is_finite() {
            return Err(Error::param("dt", format!("time grid needs dt > 0, got {dt}")));
        }
        if len < 2 {
            return Err(Error::param("len", "time grid needs at least two samples"));
        }
        Ok(TimeGrid { start, dt, len })
    }

    /// Grid covering `[start, end]` with spacing at most `dt`.
    pub fn spanning(start: f64, end: f64, dt: f64) -> Result<Self> {
        if !(end > start) {
            return Err(Error::param("end", "time grid needs end > start"));
        }
        let intervals = ((end - start) / dt - 1e-9).ceil().max(1.0) as usize;
        TimeGrid::new(start, (end - start) / intervals as f64, intervals + 1)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.len - 1)
    }
}

/// A complex envelope `f(t)` sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseEnvelope {
    grid: TimeGrid,
    amplitudes: Vec<C>,
    norm: f64,
}

impl PulseEnvelope {
    pub fn new(start: f64, dt: f64, amplitudes: Vec<C>) -> Result<Self> {
        let grid = TimeGrid::new(start, dt, amplitudes.len())?;
        Ok(PulseEnvelope::on_grid(grid, amplitudes))
    }

    fn on_grid(grid: TimeGrid, amplitudes: Vec<C>) -> Self {
        debug_assert_eq!(grid.len, amplitudes.len());
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dt;
        PulseEnvelope {
            grid,
            amplitudes,
            norm,
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn start(&self) -> f64 {
        self.grid.start
    }

    pub fn end(&self) -> f64 {
        self.grid.end()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.grid.time(i)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    pub fn amplitudes(&self) -> &[C] {
        &self.amplitudes
    }

    /// `Σ |f(t_i)|^2 dt`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn normalized(&self) -> Result<Self> {
        if !(self.norm > 0.0) {
            return Err(Error::ZeroNorm);
        }
        let s = 1.0 / self.norm.sqrt();
        Ok(self.map(|_, a| a * s))
    }

    fn map(&self, f: impl Fn(f64, C) -> C) -> Self {
        let amplitudes = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| f(self.time(i), *a))
            .collect();
        PulseEnvelope::on_grid(self.grid, amplitudes)
    }

    pub fn peak_index(&self) -> usize {
        self.amplitudes
            .iter()
            .enumerate()
            .fold((0, -1.0), |(best, max), (i, a)| {
                let v = a.norm_sqr();
                if v > max {
                    (i, v)
                } else {
                    (best, max)
                }
            })
            .0
    }

    pub fn peak_time(&self) -> f64 {
        self.time(self.peak_index())
    }

    /// `|f(t)|` as a real-valued envelope.
    pub fn magnitude(&self) -> Self {
        self.map(|_, a| C::new(a.norm(), 0.0))
    }

    /// Multiplies by `exp(i beta t)`.
    pub fn with_phase_ramp(&self, beta: f64) -> Self {
        self.map(|t, a| a * C::new(0.0, beta * t).exp())
    }

    pub fn scaled(&self, factor: C) -> Self {
        self.map(|_, a| a * factor)
    }

    /// Moves the pulse later by `tau`.
    pub fn shifted(&self, tau: f64) -> Self {
        let mut grid = self.grid;
        grid.start += tau;
        PulseEnvelope::on_grid(grid, self.amplitudes.clone())
    }

    /// `g(t) = conj(f(about - t))`.
    pub fn time_reversed_conjugate(&self, about: f64) -> Self {
        let amplitudes = self.amplitudes.iter().rev().map(|a| a.conj()).collect();
        let mut grid = self.grid;
        grid.start = about - self.end();
        PulseEnvelope::on_grid(grid, amplitudes)
    }

    /// Crops to the samples between the first and last whose intensity exceeds
    /// `floor * max|f|^2`.
    pub fn trimmed(&self, floor: f64) -> Result<Self> {
        let intensity = self.intensity();
        let peak = intensity.iter().copied().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::ZeroNorm);
        }
        let threshold = floor * peak;
        let first = intensity.iter().position(|v| *v > threshold).unwrap();
        let last = intensity.iter().rposition(|v| *v > threshold).unwrap();
        let (first, last) = if last > first {
            (first, last)
        } else if last + 1 < self.len() {
            (first, last + 1)
        } else {
            (first - 1, last)
        };
        let grid = TimeGrid::new(self.time(first), self.dt(), last - first + 1)?;
        Ok(PulseEnvelope::on_grid(
            grid,
            self.amplitudes[first..=last].to_vec(),
        ))
    }

    /// Catmull-Rom interpolation; zero outside the sampled interval.
    pub fn sample_at(&self, t: f64) -> C {
        let x = (t - self.start()) / self.dt();
        let n = self.len();
        if !(x >= 0.0) || x > (n - 1) as f64 {
            return C::new(0.0, 0.0);
        }
        let i = (x.floor() as usize).min(n - 2);
        let u = x - i as f64;
        let at = |j: isize| -> C {
            if j < 0 || j as usize >= n {
                C::new(0.0, 0.0)
            } else {
                self.amplitudes[j as usize]
            }
        };
        let i = i as isize;
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        let u2 = u * u;
        let u3 = u2 * u;
        (p1 * 2.0
            + (p2 - p0) * u
            + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * u2
            + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * u3)
            * 0.5
    }

    pub fn resampled(&self, grid: TimeGrid) -> Self {
        let amplitudes = (0..grid.len).map(|i| self.sample_at(grid.time(i))).collect();
        PulseEnvelope::on_grid(grid, amplitudes)
    }
}

/// Normalized Gaussian `exp(-(t - t0)^2 / 2w^2)` on `grid`.
///
/// The grid must extend at least `5w` on both sides of `t0`.
pub fn gaussian_pulse(w: f64, t0: f64, grid: TimeGrid) -> Result<PulseEnvelope> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::param("w", format!("pulse width must be > 0, got {w}")));
    }
    let before = (t0 - grid.start) / w;
    let after = (grid.end() - t0) / w;
    // 1e-9 absorbs rounding in grids built to end exactly at t0 + 5w.
    if before < 5.0 - 1e-9 || after < 5.0 - 1e-9 {
        return Err(Error::PulseTruncated { before, after });
    }
    let amplitudes = (0..grid.len)
        .map(|i| {
            let x = (grid.time(i) - t0) / w;
            C::new((-0.5 * x * x).exp(), 0.0)
        })
        .collect();
    PulseEnvelope::on_grid(grid, amplitudes).normalized()
}

/// Largest tolerated fraction of a pulse's norm falling outside the band.
pub const MAX_SPECTRAL_LEAKAGE: f64 = 1e-6;

/// Unnormalized spectrum `F(Δk) = Σ_j f(t_j) exp(i Δk t_j) dt` at the mode detunings.
fn spectrum_at_modes(pulse: &PulseEnvelope, grid: &ContinuumGrid) -> Vec<C> {
    const REANCHOR: usize = 64;
    let dt = pulse.dt();
    grid.detunings()
        .iter()
        .map(|&d| {
            let step = C::new(0.0, d * dt).exp();
            let mut acc = C::new(0.0, 0.0);
            let mut phase = C::new(0.0, 0.0);
            for (j, a) in pulse.amplitudes().iter().enumerate() {
                if j % REANCHOR == 0 {
                    phase = C::new(0.0, d * pulse.time(j)).exp();
                } else {
                    phase *= step;
                }
                acc += a * phase;
            }
            acc * dt
        })
        .collect()
}

/// Fraction of the pulse norm not represented by the discretized band.
pub fn spectral_leakage(pulse: &PulseEnvelope, grid: &ContinuumGrid) -> Result<f64> {
    if !(pulse.norm() > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let captured: f64 = spectrum_at_modes(pulse, grid)
        .iter()
        .map(|c| c.norm_sqr())
        .sum::<f64>()
        * grid.mode_spacing()
        / (2.0 * PI);
    Ok((1.0 - captured / pulse.norm()).abs())
}

/// Continuum amplitudes for an incident pulse arriving at the cavity at the
/// times of its envelope. The cavity and dot start empty.
pub fn pulse_to_initial_state(pulse: &PulseEnvelope, grid: &ContinuumGrid) -> Result<StateVector> {
    if !(pulse.norm() > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let duration = pulse.end() - pulse.start();
    if duration >= grid.recurrence_time() {
        return Err(Error::PulseTooLong {
            duration,
            recurrence: grid.recurrence_time(),
        });
    }
    let spectrum = spectrum_at_modes(pulse, grid);
    let mode_norm: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
    let leakage = (1.0 - mode_norm * grid.mode_spacing() / (2.0 * PI) / pulse.norm()).abs();
    if leakage > MAX_SPECTRAL_LEAKAGE {
        return Err(Error::SpectralLeakage {
            leakage,
            limit: MAX_SPECTRAL_LEAKAGE,
        });
    }
    let s = 1.0 / mode_norm.sqrt();
    let continuum: Vec<C> = spectrum.iter().map(|c| c * s).collect();
    Ok(StateVector::from_parts(
        C::new(0.0, 0.0),
        C::new(0.0, 0.0),
        &continuum,
    ))
}

/// Where to evaluate the emitted field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputGrid {
    /// `t_j = T - 2pi j / (N dw)`, the lattice conjugate to the mode grid.
    Conjugate,
    Uniform(TimeGrid),
}

/// Default bound on the population left in the cavity and dot at extraction.
pub const EMISSION_RESIDUAL_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedPulse {
    pub pulse: PulseEnvelope,
    /// `|c_cav(T)|^2 + |c_qd(T)|^2`.
    pub residual: f64,
    pub warning: Option<Warning>,
}

/// Output field `f(t) = sqrt(dw / 2pi) Σ_k c_k(T) exp(-i Δk (t - T))`.
///
/// The `sqrt(dw)` factor converts mode amplitudes into a spectral density, so
/// the returned pulse carries the continuum norm `Σ|c_k|^2`.
pub fn output_pulse(
    final_state: &StateVector,
    grid: &ContinuumGrid,
    t_final: f64,
    output: OutputGrid,
) -> Result<ExtractedPulse> {
    output_pulse_with_threshold(
        final_state,
        grid,
        t_final,
        output,
        EMISSION_RESIDUAL_THRESHOLD,
    )
}

pub fn output_pulse_with_threshold(
    final_state: &StateVector,
    grid: &ContinuumGrid,
    t_final: f64,
    output: OutputGrid,
    threshold: f64,
) -> Result<ExtractedPulse> {
    if final_state.n_modes() != grid.len() {
        return Err(Error::DimensionMismatch {
            state: final_state.n_modes(),
            grid: grid.len(),
        });
    }
    let scale = (grid.mode_spacing() / (2.0 * PI)).sqrt();
    let pulse = match output {
        OutputGrid::Conjugate => conjugate_grid_pulse(final_state.continuum(), grid, t_final, scale),
        OutputGrid::Uniform(times) => {
            let amplitudes = (0..times.len)
                .map(|i| {
                    let tau = times.time(i) - t_final;
                    final_state
                        .continuum()
                        .iter()
                        .zip(grid.detunings())
                        .map(|(c, d)| c * C::new(0.0, -d * tau).exp())
                        .sum::<C>()
                        * scale
                })
                .collect();
            PulseEnvelope::on_grid(times, amplitudes)
        }
    };
    let residual = final_state.in_system_population();
    let warning = (residual > threshold).then_some(Warning::EmissionIncomplete {
        residual,
        threshold,
    });
    Ok(ExtractedPulse {
        pulse,
        residual,
        warning,
    })
}

fn conjugate_grid_pulse(modes: &[C], grid: &ContinuumGrid, t_final: f64, scale: f64) -> PulseEnvelope {
    let n = modes.len();
    let mut buffer = modes.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buffer);
    let spacing = 2.0 * PI / (n as f64 * grid.mode_spacing());
    // Sample j sits at T - j * spacing and carries (-1)^j exp(i pi j / N).
    let amplitudes = (0..n)
        .rev()
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            buffer[j] * C::new(0.0, PI * j as f64 / n as f64).exp() * (sign * scale)
        })
        .collect();
    let times = TimeGrid {
        start: t_final - (n - 1) as f64 * spacing,
        dt: spacing,
        len: n,
    };
    PulseEnvelope::on_grid(times, amplitudes)
}

/// Unwrapped phase of a pulse, masked where the intensity is below a floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    pub grid: TimeGrid,
    pub phase: Vec<Option<f64>>,
}

impl PhaseProfile {
    pub fn unmasked(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.phase
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (self.grid.time(i), p)))
    }

    /// `max Φ - min Φ` over the unmasked samples.
    pub fn excursion(&self) -> f64 {
        let (lo, hi) = self
            .unmasked()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, p)| {
                (lo.min(p), hi.max(p))
            });
        hi - lo
    }
}

/// Default intensity floor, relative to the peak, below which phase is masked.
pub const DEFAULT_PHASE_FLOOR: f64 = 0.01;

/// `arg f(t)` unwrapped across jumps larger than `pi` between consecutive
/// unmasked samples.
pub fn phase_profile(pulse: &PulseEnvelope, intensity_floor: f64) -> Result<PhaseProfile> {
    let intensity = pulse.intensity();
    let peak = intensity.iter().copied().fold(0.0, f64::max);
    let threshold = intensity_floor * peak;
    let mut phase = Vec::with_capacity(pulse.len());
    let mut previous: Option<(f64, f64)> = None; // (wrapped, unwrapped)
    for (a, v) in pulse.amplitudes().iter().zip(&intensity) {
        if !(peak > 0.0) || *v <= threshold {
            phase.push(None);
            continue;
        }
        let wrapped = a.arg();
        let unwrapped = match previous {
            None => wrapped,
            Some((last_wrapped, last_unwrapped)) => {
                let mut diff = wrapped - last_wrapped;
                while diff > PI {
                    diff -= 2.0 * PI;
                }
                while diff < -PI {
                    diff += 2.0 * PI;
                }
                last_unwrapped + diff
            }
        };
        previous = Some((wrapped, unwrapped));
        phase.push(Some(unwrapped));
    }
    if previous.is_none() {
        return Err(Error::AllMasked);
    }
    Ok(PhaseProfile {
        grid: pulse.grid(),
        phase,
    })
}
