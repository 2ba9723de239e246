//! Single-excitation Schrödinger evolution and its fixed-step integrator.
//!
//! Amplitudes obey
//!
//! ```text
//! dc_cav/dt = -i Δc c_cav - g c_qd + κ' Σ_k c_k
//! dc_qd/dt  =  g c_cav + (-i Δqd(t) - γ) c_qd
//! dc_k/dt   = -i Δk c_k - κ' c_cav
//! ```

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ContinuumGrid, SystemParams};
use crate::schedule::DetuningSchedule;

type C = Complex64;

const CAV: usize = 0;
const QD: usize = 1;
const MODES: usize = 2;

/// Amplitudes of `|g,1,vac>`, `|e,0,vac>` and the one-photon continuum states.
///
/// Stored contiguously as `[c_cav, c_qd, c_1, .., c_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C>,
}

impl StateVector {
    pub fn zeros(n_modes: usize) -> Self {
        StateVector {
            amplitudes: vec![C::new(0.0, 0.0); n_modes + MODES],
        }
    }

    /// Dot excited, everything else empty.
    pub fn excited_dot(n_modes: usize) -> Self {
        let mut state = StateVector::zeros(n_modes);
        state.amplitudes[QD] = C::new(1.0, 0.0);
        state
    }

    pub fn from_parts(c_cav: C, c_qd: C, continuum: &[C]) -> Self {
        let mut amplitudes = Vec::with_capacity(continuum.len() + MODES);
        amplitudes.push(c_cav);
        amplitudes.push(c_qd);
        amplitudes.extend_from_slice(continuum);
        StateVector { amplitudes }
    }

    /// Builds a state from the packed `[c_cav, c_qd, c_k..]` layout.
    pub fn from_packed(amplitudes: Vec<C>) -> Self {
        assert!(
            amplitudes.len() >= MODES,
            "packed state needs at least the cavity and dot amplitudes"
        );
        StateVector { amplitudes }
    }

    pub fn cavity(&self) -> C {
        self.amplitudes[CAV]
    }

    pub fn dot(&self) -> C {
        self.amplitudes[QD]
    }

    pub fn continuum(&self) -> &[C] {
        &self.amplitudes[MODES..]
    }

    pub fn continuum_mut(&mut self) -> &mut [C] {
        &mut self.amplitudes[MODES..]
    }

    pub fn set_cavity(&mut self, value: C) {
        self.amplitudes[CAV] = value;
    }

    pub fn set_dot(&mut self, value: C) {
        self.amplitudes[QD] = value;
    }

    pub fn as_packed(&self) -> &[C] {
        &self.amplitudes
    }

    pub fn n_modes(&self) -> usize {
        self.amplitudes.len() - MODES
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn continuum_norm_sqr(&self) -> f64 {
        self.continuum().iter().map(|c| c.norm_sqr()).sum()
    }

    /// Population remaining in the cavity and the dot.
    pub fn in_system_population(&self) -> f64 {
        self.cavity().norm_sqr() + self.dot().norm_sqr()
    }

    pub fn scaled(&self, factor: C) -> Self {
        StateVector {
            amplitudes: self.amplitudes.iter().map(|c| c * factor).collect(),
        }
    }
}

/// Constant coefficients of the equations of motion, gathered once per run.
struct Coefficients<'a> {
    g: f64,
    gamma: f64,
    delta_c: f64,
    kappa_prime: f64,
    detunings: &'a [f64],
}

impl<'a> Coefficients<'a> {
    fn new(params: &SystemParams, grid: &'a ContinuumGrid) -> Self {
        Coefficients {
            g: params.g,
            gamma: params.gamma,
            delta_c: params.delta_c,
            kappa_prime: grid.kappa_prime(),
            detunings: grid.detunings(),
        }
    }

    #[inline]
    fn apply(&self, y: &[C], out: &mut [C], delta_qd: f64) {
        let cav = y[CAV];
        let qd = y[QD];
        let drive = self.kappa_prime * cav;
        let mut sum = C::new(0.0, 0.0);
        for ((o, c), d) in out[MODES..]
            .iter_mut()
            .zip(&y[MODES..])
            .zip(self.detunings)
        {
            sum += c;
            // -i d c
            *o = C::new(d * c.im - drive.re, -d * c.re - drive.im);
        }
        out[CAV] = C::new(self.delta_c * cav.im, -self.delta_c * cav.re) - self.g * qd
            + self.kappa_prime * sum;
        out[QD] = self.g * cav + C::new(-self.gamma * qd.re + delta_qd * qd.im, -self.gamma * qd.im - delta_qd * qd.re);
    }
}

/// Time derivative of `state` at time `t`.
pub fn rhs(
    state: &StateVector,
    t: f64,
    params: &SystemParams,
    grid: &ContinuumGrid,
    schedule: &DetuningSchedule,
) -> Result<StateVector> {
    check_dimensions(state, grid)?;
    let mut out = StateVector::zeros(grid.len());
    Coefficients::new(params, grid).apply(
        &state.amplitudes,
        &mut out.amplitudes,
        schedule.evaluate(t),
    );
    Ok(out)
}

fn check_dimensions(state: &StateVector, grid: &ContinuumGrid) -> Result<()> {
    if state.n_modes() != grid.len() {
        return Err(Error::DimensionMismatch {
            state: state.n_modes(),
            grid: grid.len(),
        });
    }
    Ok(())
}

/// `min(1e-3/kappa, 1e-3/g, 0.1/omega_b)`, skipping vanishing rates.
pub fn default_time_step(params: &SystemParams) -> f64 {
    let mut dt = 0.1 / params.omega_b;
    for rate in [params.kappa, params.g] {
        if rate > 0.0 {
            dt = dt.min(1e-3 / rate);
        }
    }
    dt
}

/// Largest step the integrator accepts.
pub fn max_time_step(params: &SystemParams) -> f64 {
    0.1 / params.omega_b
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// End of the window `[0, t_end]`.
    pub t_end: f64,
    /// Requested step; the actual step is `t_end / ceil(t_end / dt)`.
    pub dt: f64,
    /// Continuum snapshots every this many steps; 0 keeps only the final state.
    pub continuum_stride: usize,
    /// Record the total norm at every step.
    pub track_norm: bool,
}

impl IntegrateOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        IntegrateOptions {
            t_end,
            dt,
            continuum_stride: 50,
            track_norm: true,
        }
    }

    pub fn continuum_stride(mut self, stride: usize) -> Self {
        self.continuum_stride = stride;
        self
    }

    pub fn track_norm(mut self, track: bool) -> Self {
        self.track_norm = track;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub continuum: Vec<C>,
}

/// Sampled evolution over `[0, T]`.
///
/// Cavity and dot amplitudes are kept at every step; continuum amplitudes only
/// at the snapshot stride and always at the final time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub cavity: Vec<C>,
    pub dot: Vec<C>,
    /// Empty unless norm tracking was requested.
    pub norm: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: StateVector,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.dot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dot.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn dot_population(&self) -> Vec<f64> {
        self.dot.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn cavity_population(&self) -> Vec<f64> {
        self.cavity.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Classical fourth-order Runge-Kutta propagation of [`rhs`] over `[0, opts.t_end]`.
pub fn integrate(
    initial: &StateVector,
    params: &SystemParams,
    grid: &ContinuumGrid,
    schedule: &DetuningSchedule,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    check_dimensions(initial, grid)?;
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(Error::param("dt", format!("must be > 0, got {}", opts.dt)));
    }
    if !(opts.t_end > 0.0) || !opts.t_end.is_finite() {
        return Err(Error::param(
            "t_end",
            format!("must be > 0, got {}", opts.t_end),
        ));
    }
    let limit = max_time_step(params);
    if opts.dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge {
            dt: opts.dt,
            limit,
        });
    }
    let recurrence = grid.recurrence_time();
    if opts.t_end >= recurrence {
        return Err(Error::RecurrenceGuard {
            window: opts.t_end,
            recurrence,
        });
    }

    let n_steps = ((opts.t_end / opts.dt) - 1e-9).ceil().max(1.0) as usize;
    let dt = opts.t_end / n_steps as f64;
    let coeffs = Coefficients::new(params, grid);
    let len = initial.amplitudes.len();

    let mut y = initial.amplitudes.clone();
    let mut k1 = vec![C::new(0.0, 0.0); len];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut stage = k1.clone();

    let mut cavity = Vec::with_capacity(n_steps + 1);
    let mut dot = Vec::with_capacity(n_steps + 1);
    let mut norm = Vec::with_capacity(if opts.track_norm { n_steps + 1 } else { 0 });
    let mut snapshots = Vec::new();

    let record = |step: usize,
                  y: &[C],
                  cavity: &mut Vec<C>,
                  dot: &mut Vec<C>,
                  norm: &mut Vec<f64>,
                  snapshots: &mut Vec<Snapshot>| {
        cavity.push(y[CAV]);
        dot.push(y[QD]);
        if opts.track_norm {
            norm.push(y.iter().map(|c| c.norm_sqr()).sum());
        }
        if opts.continuum_stride > 0 && step % opts.continuum_stride == 0 && step != n_steps {
            snapshots.push(Snapshot {
                step,
                time: step as f64 * dt,
                continuum: y[MODES..].to_vec(),
            });
        }
    };

    record(0, &y, &mut cavity, &mut dot, &mut norm, &mut snapshots);
    let half = 0.5 * dt;
    let sixth = dt / 6.0;
    for step in 1..=n_steps {
        let t = (step - 1) as f64 * dt;
        let d_start = schedule.evaluate(t);
        let d_mid = schedule.evaluate(t + half);
        let d_end = schedule.evaluate(t + dt);

        coeffs.apply(&y, &mut k1, d_start);
        for ((s, yi), k) in stage.iter_mut().zip(&y).zip(&k1) {
            *s = yi + k * half;
        }
        coeffs.apply(&stage, &mut k2, d_mid);
        for ((s, yi), k) in stage.iter_mut().zip(&y).zip(&k2) {
            *s = yi + k * half;
        }
        coeffs.apply(&stage, &mut k3, d_mid);
        for ((s, yi), k) in stage.iter_mut().zip(&y).zip(&k3) {
            *s = yi + k * dt;
        }
        coeffs.apply(&stage, &mut k4, d_end);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * sixth;
        }

        let probe = y[CAV] + y[QD];
        if !probe.re.is_finite() || !probe.im.is_finite() {
            return Err(Error::NonFinite {
                time: step as f64 * dt,
                step,
            });
        }
        record(step, &y, &mut cavity, &mut dot, &mut norm, &mut snapshots);
    }

    if y.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite {
            time: opts.t_end,
            step: n_steps,
        });
    }
    let final_state = StateVector { amplitudes: y };
    if opts.continuum_stride > 0 {
        snapshots.push(Snapshot {
            step: n_steps,
            time: opts.t_end,
            continuum: final_state.continuum().to_vec(),
        });
    }
    Ok(Trajectory {
        dt,
        cavity,
        dot,
        norm,
        snapshots,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::discretize_continuum;
    use proptest::prelude::*;

    fn small_params(n_modes: usize) -> SystemParams {
        SystemParams {
            omega_b: 2.0,
            n_modes,
            ..SystemParams::default()
        }
    }

    #[test]
    fn zero_state_has_zero_derivative() {
        let params = small_params(16);
        let grid = discretize_continuum(&params).unwrap();
        let d = rhs(
            &StateVector::zeros(16),
            0.3,
            &params,
            &grid,
            &DetuningSchedule::constant(2.0),
        )
        .unwrap();
        assert!(d.as_packed().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn excited_dot_derivative() {
        let params = SystemParams {
            g: 0.7,
            ..small_params(16)
        };
        let grid = discretize_continuum(&params).unwrap();
        let d = rhs(
            &StateVector::excited_dot(16),
            0.0,
            &params,
            &grid,
            &DetuningSchedule::default(),
        )
        .unwrap();
        assert_eq!(d.cavity(), C::new(-0.7, 0.0));
        assert_eq!(d.dot(), C::new(0.0, 0.0));
        assert!(d.continuum().iter().all(|c| c.norm() == 0.0));

        let lossy = SystemParams {
            gamma: 0.25,
            ..params
        };
        let d = rhs(
            &StateVector::excited_dot(16),
            0.0,
            &lossy,
            &grid,
            &DetuningSchedule::default(),
        )
        .unwrap();
        assert_eq!(d.dot(), C::new(-0.25, 0.0));
    }

    #[test]
    fn continuum_and_cavity_terms() {
        let params = SystemParams {
            delta_c: 0.5,
            ..small_params(4)
        };
        let grid = discretize_continuum(&params).unwrap();
        let kp = grid.kappa_prime();
        let modes = [
            C::new(1.0, 0.0),
            C::new(0.0, 1.0),
            C::new(2.0, -1.0),
            C::new(0.5, 0.5),
        ];
        let state = StateVector::from_parts(C::new(0.3, -0.2), C::new(0.1, 0.4), &modes);
        let d = rhs(&state, 1.0, &params, &grid, &DetuningSchedule::constant(1.5)).unwrap();
        let i = C::i();
        let sum: C = modes.iter().sum();
        let expect_cav = -i * 0.5 * state.cavity() - params.g * state.dot() + kp * sum;
        let expect_qd = params.g * state.cavity() - i * 1.5 * state.dot();
        assert!((d.cavity() - expect_cav).norm() < 1e-15);
        assert!((d.dot() - expect_qd).norm() < 1e-15);
        for (k, (dk, ck)) in d.continuum().iter().zip(&modes).enumerate() {
            let expect = -i * grid.detunings()[k] * ck - kp * state.cavity();
            assert!((dk - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = small_params(16);
        let grid = discretize_continuum(&params).unwrap();
        let schedule = DetuningSchedule::default();
        assert!(matches!(
            rhs(&StateVector::zeros(8), 0.0, &params, &grid, &schedule),
            Err(Error::DimensionMismatch { state: 8, grid: 16 })
        ));
        assert!(integrate(
            &StateVector::zeros(8),
            &params,
            &grid,
            &schedule,
            &IntegrateOptions::new(1.0, 1e-2)
        )
        .is_err());
    }

    #[test]
    fn guards() {
        let params = small_params(16);
        let grid = discretize_continuum(&params).unwrap();
        let s = StateVector::excited_dot(16);
        let schedule = DetuningSchedule::default();
        // recurrence time is 2pi / 0.25 = 25.1
        assert!(matches!(
            integrate(&s, &params, &grid, &schedule, &IntegrateOptions::new(26.0, 1e-2)),
            Err(Error::RecurrenceGuard { .. })
        ));
        assert!(matches!(
            integrate(&s, &params, &grid, &schedule, &IntegrateOptions::new(1.0, 0.1)),
            Err(Error::StepTooLarge { .. })
        ));
        assert!(integrate(&s, &params, &grid, &schedule, &IntegrateOptions::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn non_finite_aborts() {
        let params = SystemParams {
            gamma: 0.0,
            ..small_params(4)
        };
        let grid = discretize_continuum(&params).unwrap();
        let mut s = StateVector::zeros(4);
        s.set_dot(C::new(f64::NAN, 0.0));
        assert!(matches!(
            integrate(
                &s,
                &params,
                &grid,
                &DetuningSchedule::default(),
                &IntegrateOptions::new(0.1, 1e-2)
            ),
            Err(Error::NonFinite { step: 1, .. })
        ));
    }

    #[test]
    fn closed_system_rabi_oscillation() {
        let g = 1.3;
        let params = SystemParams {
            g,
            kappa: 0.0,
            omega_b: 20.0,
            n_modes: 64,
            ..SystemParams::default()
        };
        let grid = discretize_continuum(&params).unwrap();
        let traj = integrate(
            &StateVector::excited_dot(64),
            &params,
            &grid,
            &DetuningSchedule::default(),
            &IntegrateOptions::new(10.0 / g, 1e-3 / g),
        )
        .unwrap();
        let worst = traj
            .times()
            .zip(&traj.dot)
            .map(|(t, c)| (c.norm_sqr() - (g * t).cos().powi(2)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn snapshot_stride_and_final_state() {
        let params = small_params(8);
        let grid = discretize_continuum(&params).unwrap();
        let traj = integrate(
            &StateVector::excited_dot(8),
            &params,
            &grid,
            &DetuningSchedule::default(),
            &IntegrateOptions::new(1.0, 0.01).continuum_stride(30),
        )
        .unwrap();
        assert_eq!(traj.len(), 101);
        let steps: Vec<usize> = traj.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 30, 60, 90, 100]);
        assert_eq!(
            traj.snapshots.last().unwrap().continuum,
            traj.final_state.continuum()
        );
        assert!((traj.t_end() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lossy_norm_never_increases() {
        let params = SystemParams {
            gamma: 0.3,
            ..small_params(32)
        };
        let grid = discretize_continuum(&params).unwrap();
        let traj = integrate(
            &StateVector::excited_dot(32),
            &params,
            &grid,
            &DetuningSchedule::default(),
            &IntegrateOptions::new(10.0, 1e-2),
        )
        .unwrap();
        for w in traj.norm.windows(2) {
            assert!(w[1] <= w[0] + 1e-14);
        }
        assert!(traj.norm.last().unwrap() < &0.9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn linearity(
            re in -2.0f64..2.0,
            im in -2.0f64..2.0,
            seed_re in proptest::collection::vec(-1.0f64..1.0, 10),
            seed_im in proptest::collection::vec(-1.0f64..1.0, 10),
        ) {
            let params = SystemParams { g: 0.8, gamma: 0.1, ..small_params(8) };
            let grid = discretize_continuum(&params).unwrap();
            let packed: Vec<C> = seed_re.iter().zip(&seed_im).map(|(a, b)| C::new(*a, *b)).collect();
            let psi = StateVector::from_packed(packed);
            let alpha = C::new(re, im);
            let schedule = DetuningSchedule::step(0.0, vec![crate::schedule::Switch { time: 1.0, value: 3.0 }]).unwrap();
            let opts = IntegrateOptions::new(3.0, 1e-2);
            let a = integrate(&psi.scaled(alpha), &params, &grid, &schedule, &opts).unwrap();
            let b = integrate(&psi, &params, &grid, &schedule, &opts).unwrap();
            let scale = alpha.norm().max(1e-300);
            for (x, y) in a.dot.iter().zip(&b.dot).chain(a.cavity.iter().zip(&b.cavity)) {
                prop_assert!((x - alpha * y).norm() <= 1e-12 * scale * (1.0 + y.norm()));
            }
            for (x, y) in a.final_state.as_packed().iter().zip(b.final_state.as_packed()) {
                prop_assert!((x - alpha * y).norm() <= 1e-12 * scale * (1.0 + y.norm()));
            }
        }
    }
}
