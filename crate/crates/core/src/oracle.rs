//! Exact propagator of the constant-coefficient equations, for verification.
//!
//! The coefficient matrix is exponentiated densely with the degree-13 Padé
//! scaling-and-squaring scheme (Higham 2005). Nothing here shares code with
//! the Runge-Kutta path in [`crate::dynamics`].

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dynamics::StateVector;
use crate::error::{Error, Result};
use crate::model::{ContinuumGrid, SystemParams};
use crate::schedule::DetuningSchedule;

type C = Complex64;

/// Largest continuum the dense oracle accepts.
pub const MAX_ORACLE_MODES: usize = 128;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Coefficient matrix `M` of `dc/dt = M c` in the packed `[cav, qd, modes..]` order.
pub fn coefficient_matrix(
    params: &SystemParams,
    grid: &ContinuumGrid,
    detuning: f64,
) -> DMatrix<C> {
    let n = grid.len() + 2;
    let kp = grid.kappa_prime();
    let mut m = DMatrix::<C>::zeros(n, n);
    m[(0, 0)] = C::new(0.0, -params.delta_c);
    m[(0, 1)] = C::new(-params.g, 0.0);
    m[(1, 0)] = C::new(params.g, 0.0);
    m[(1, 1)] = C::new(-params.gamma, -detuning);
    for (k, d) in grid.detunings().iter().enumerate() {
        m[(0, k + 2)] = C::new(kp, 0.0);
        m[(k + 2, 0)] = C::new(-kp, 0.0);
        m[(k + 2, k + 2)] = C::new(0.0, -d);
    }
    m
}

fn one_norm(m: &DMatrix<C>) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a [13/13] Padé approximant.
pub fn expm(a: &DMatrix<C>) -> DMatrix<C> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * C::new(2f64.powi(-squarings), 0.0);
    let b = |i: usize| C::new(PADE13[i], 0.0);
    let ident = DMatrix::<C>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let inner_u = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u = &a * (inner_u + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &ident * b(1));
    let inner_v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8));
    let v = inner_v + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &ident * b(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// `exp(M t)` for a constant detuning schedule.
pub fn propagator_oracle(
    params: &SystemParams,
    grid: &ContinuumGrid,
    schedule: &DetuningSchedule,
    t: f64,
) -> Result<DMatrix<C>> {
    if grid.len() > MAX_ORACLE_MODES {
        return Err(Error::OracleTooLarge {
            n_modes: grid.len(),
            max: MAX_ORACLE_MODES,
        });
    }
    let detuning = schedule
        .constant_value()
        .ok_or(Error::NonConstantSchedule)?;
    let m = coefficient_matrix(params, grid, detuning);
    Ok(expm(&(m * C::new(t, 0.0))))
}

/// Applies a propagator to a state.
pub fn propagate(propagator: &DMatrix<C>, state: &StateVector) -> StateVector {
    let v = nalgebra::DVector::from_column_slice(state.as_packed());
    let out = propagator * v;
    StateVector::from_packed(out.iter().copied().collect())
}
