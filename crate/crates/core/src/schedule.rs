//! Time-dependent dot detuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detuning of the dot transition from the rotating frame as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetuningSchedule {
    Constant {
        value: f64,
    },
    /// Instantaneous jumps: `value` holds from each switch time onward.
    Step {
        initial: f64,
        switches: Vec<Switch>,
    },
    /// Like `Step`, with each jump smoothed by `0.5 (1 + tanh((t - t_s) / timescale))`.
    SmoothStep {
        initial: f64,
        switches: Vec<Switch>,
        timescale: f64,
    },
    /// Linear interpolation between knots, constant beyond the first and last.
    PiecewiseLinear {
        knots: Vec<Knot>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Switch {
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knot {
    pub time: f64,
    pub value: f64,
}

impl Default for DetuningSchedule {
    fn default() -> Self {
        DetuningSchedule::Constant { value: 0.0 }
    }
}

impl DetuningSchedule {
    pub fn constant(value: f64) -> Self {
        DetuningSchedule::Constant { value }
    }

    pub fn step(initial: f64, switches: Vec<Switch>) -> Result<Self> {
        let schedule = DetuningSchedule::Step { initial, switches };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn smooth_step(initial: f64, switches: Vec<Switch>, timescale: f64) -> Result<Self> {
        let schedule = DetuningSchedule::SmoothStep {
            initial,
            switches,
            timescale,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn piecewise_linear(knots: Vec<Knot>) -> Result<Self> {
        let schedule = DetuningSchedule::PiecewiseLinear { knots };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        let times: Vec<f64> = match self {
            DetuningSchedule::Constant { value } => {
                return finite(*value, "constant value");
            }
            DetuningSchedule::Step { initial, switches } => {
                finite(*initial, "initial value")?;
                switches.iter().map(|s| s.time).collect()
            }
            DetuningSchedule::SmoothStep {
                initial,
                switches,
                timescale,
            } => {
                finite(*initial, "initial value")?;
                if !(*timescale > 0.0) || !timescale.is_finite() {
                    return Err(Error::InvalidSchedule(format!(
                        "smoothing timescale must be > 0, got {timescale}"
                    )));
                }
                switches.iter().map(|s| s.time).collect()
            }
            DetuningSchedule::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return Err(Error::InvalidSchedule("no knots".into()));
                }
                knots.iter().map(|k| k.time).collect()
            }
        };
        let values: Vec<f64> = match self {
            DetuningSchedule::Step { switches, .. }
            | DetuningSchedule::SmoothStep { switches, .. } => {
                switches.iter().map(|s| s.value).collect()
            }
            DetuningSchedule::PiecewiseLinear { knots } => knots.iter().map(|k| k.value).collect(),
            DetuningSchedule::Constant { .. } => unreachable!(),
        };
        for (t, v) in times.iter().zip(&values) {
            finite(*t, "switch time")?;
            finite(*v, "detuning value")?;
            if *t < 0.0 {
                return Err(Error::InvalidSchedule(format!("negative time {t}")));
            }
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule(
                "times must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        self.constant_value().is_some()
    }

    /// The value when the schedule does not depend on time.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            DetuningSchedule::Constant { value } => Some(*value),
            DetuningSchedule::Step { initial, switches }
            | DetuningSchedule::SmoothStep {
                initial, switches, ..
            } => switches.iter().all(|s| s.value == *initial).then_some(*initial),
            DetuningSchedule::PiecewiseLinear { knots } => {
                let first = knots.first()?.value;
                knots.iter().all(|k| k.value == first).then_some(first)
            }
        }
    }

    /// Time after which the schedule holds its final value. Smooth steps are
    /// treated as settled 20 timescales after their last switch.
    pub fn settle_time(&self) -> f64 {
        match self {
            DetuningSchedule::Constant { .. } => 0.0,
            DetuningSchedule::Step { switches, .. } => switches.last().map_or(0.0, |s| s.time),
            DetuningSchedule::SmoothStep {
                switches,
                timescale,
                ..
            } => switches
                .last()
                .map_or(0.0, |s| (s.time + 20.0 * timescale).max(0.0)),
            DetuningSchedule::PiecewiseLinear { knots } => knots.last().map_or(0.0, |k| k.time.max(0.0)),
        }
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        match self {
            DetuningSchedule::Constant { value } => *value,
            DetuningSchedule::Step { initial, switches } => switches
                .iter()
                .take_while(|s| s.time <= t)
                .last()
                .map_or(*initial, |s| s.value),
            DetuningSchedule::SmoothStep {
                initial,
                switches,
                timescale,
            } => {
                let mut value = *initial;
                let mut previous = *initial;
                for s in switches {
                    let x = (t - s.time) / timescale;
                    value += (s.value - previous) * 0.5 * (1.0 + x.tanh());
                    previous = s.value;
                }
                value
            }
            DetuningSchedule::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if t <= first.time {
                    return first.value;
                }
                if t >= last.time {
                    return last.value;
                }
                let i = knots.partition_point(|k| k.time <= t);
                let (a, b) = (knots[i - 1], knots[i]);
                a.value + (b.value - a.value) * (t - a.time) / (b.time - a.time)
            }
        }
    }
}

fn finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSchedule(format!("{what} is not finite")))
    }
}

/// Resonant until `t_store`, detuned by `delta_far` until `t_release`, resonant afterwards.
/// `smooth_timescale` replaces the jumps with tanh switches of that timescale.
pub fn store_release_schedule(
    t_store: f64,
    t_release: f64,
    delta_far: f64,
    smooth_timescale: Option<f64>,
) -> Result<DetuningSchedule> {
    if !(t_store > 0.0 && t_release > t_store && t_release.is_finite()) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < t_store < t_release, got t_store = {t_store}, t_release = {t_release}"
        )));
    }
    if delta_far == 0.0 {
        return Ok(DetuningSchedule::constant(0.0));
    }
    let switches = vec![
        Switch {
            time: t_store,
            value: delta_far,
        },
        Switch {
            time: t_release,
            value: 0.0,
        },
    ];
    match smooth_timescale {
        Some(tau) => DetuningSchedule::smooth_step(0.0, switches, tau),
        None => DetuningSchedule::step(0.0, switches),
    }
}

/// Profile of a monotone approach from `delta_start` to resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RampShape {
    /// `delta_start * (1 - t / t_end)^exponent` on `[0, t_end]`.
    Power { exponent: f64 },
    /// Fractions of `delta_start` at equally spaced interior times, linearly
    /// interpolated. Must be non-increasing and lie in `[0, 1]`.
    Knots { fractions: Vec<f64> },
}

/// Number of linear segments used to tabulate a power-law ramp.
const RAMP_SEGMENTS: usize = 256;

/// A monotone ramp from `delta_start` at `t = 0` to zero at `ramp_end_time`.
///
/// `ramp_end_time = 0` is the instantaneous-drop limit and yields a resonant
/// constant schedule.
pub fn shaping_ramp_schedule(
    delta_start: f64,
    ramp_end_time: f64,
    shape: &RampShape,
) -> Result<DetuningSchedule> {
    if !delta_start.is_finite() {
        return Err(Error::InvalidSchedule("delta_start is not finite".into()));
    }
    if !(ramp_end_time >= 0.0) || !ramp_end_time.is_finite() {
        return Err(Error::InvalidSchedule(format!(
            "ramp_end_time must be >= 0, got {ramp_end_time}"
        )));
    }
    let fractions: Vec<f64> = match shape {
        RampShape::Power { exponent } => {
            if !(*exponent > 0.0) || !exponent.is_finite() {
                return Err(Error::InvalidSchedule(format!(
                    "ramp exponent must be > 0, got {exponent}"
                )));
            }
            (1..RAMP_SEGMENTS)
                .map(|i| (1.0 - i as f64 / RAMP_SEGMENTS as f64).powf(*exponent))
                .collect()
        }
        RampShape::Knots { fractions } => {
            if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(Error::InvalidSchedule(
                    "ramp fractions must lie in [0, 1]".into(),
                ));
            }
            if fractions.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidSchedule(
                    "ramp fractions must be non-increasing".into(),
                ));
            }
            fractions.clone()
        }
    };
    if ramp_end_time == 0.0 || delta_start == 0.0 {
        return Ok(DetuningSchedule::constant(0.0));
    }
    let segments = fractions.len() + 1;
    let mut knots = Vec::with_capacity(segments + 1);
    knots.push(Knot {
        time: 0.0,
        value: delta_start,
    });
    for (i, f) in fractions.iter().enumerate() {
        knots.push(Knot {
            time: ramp_end_time * (i + 1) as f64 / segments as f64,
            value: delta_start * f,
        });
    }
    knots.push(Knot {
        time: ramp_end_time,
        value: 0.0,
    });
    DetuningSchedule::piecewise_linear(knots)
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: f64 = 1.0;

    #[test]
    fn constant_is_constant() {
        let s = DetuningSchedule::constant(0.0);
        for t in [0.0, 1.0, 1e6] {
            assert_eq!(s.evaluate(t), 0.0);
        }
    }

    #[test]
    fn step_switches_at_time() {
        let s = DetuningSchedule::step(
            0.0,
            vec![Switch {
                time: 5.0,
                value: 30.0 * G,
            }],
        )
        .unwrap();
        assert_eq!(s.evaluate(4.9), 0.0);
        assert_eq!(s.evaluate(5.0), 30.0);
        assert_eq!(s.evaluate(5.1), 30.0);
    }

    #[test]
    fn piecewise_linear_interpolates_and_clamps() {
        let s = DetuningSchedule::piecewise_linear(vec![
            Knot {
                time: 0.0,
                value: 30.0 * G,
            },
            Knot {
                time: 5.0,
                value: 0.0,
            },
        ])
        .unwrap();
        assert!((s.evaluate(2.5) - 15.0).abs() < 1e-12);
        assert_eq!(s.evaluate(0.0), 30.0);
        assert_eq!(s.evaluate(7.0), 0.0);
    }

    #[test]
    fn rejects_unordered_switches() {
        let bad = DetuningSchedule::step(
            0.0,
            vec![
                Switch {
                    time: 2.0,
                    value: 1.0,
                },
                Switch {
                    time: 2.0,
                    value: 0.0,
                },
            ],
        );
        assert!(bad.is_err());
        assert!(DetuningSchedule::smooth_step(0.0, vec![], 0.0).is_err());
        assert!(DetuningSchedule::piecewise_linear(vec![]).is_err());
    }

    #[test]
    fn smooth_step_converges_to_step() {
        let tau = 1e-4;
        let switches = vec![
            Switch {
                time: 3.0,
                value: 30.0,
            },
            Switch {
                time: 13.0,
                value: 0.0,
            },
        ];
        let sharp = DetuningSchedule::step(0.0, switches.clone()).unwrap();
        let smooth = DetuningSchedule::smooth_step(0.0, switches, tau).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let t = i as f64 * 1e-4;
            if (t - 3.0).abs() < 10.0 * tau || (t - 13.0).abs() < 10.0 * tau {
                continue;
            }
            worst = worst.max((sharp.evaluate(t) - smooth.evaluate(t)).abs());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn store_release_protocol() {
        let s = store_release_schedule(6.0, 16.0, 30.0, None).unwrap();
        assert_eq!(s.evaluate(5.99), 0.0);
        assert_eq!(s.evaluate(10.0), 30.0);
        assert_eq!(s.evaluate(16.0), 0.0);
        assert!(store_release_schedule(6.0, 6.0, 30.0, None).is_err());
        assert!(store_release_schedule(0.0, 6.0, 30.0, None).is_err());
        assert!(store_release_schedule(6.0, 16.0, 0.0, None)
            .unwrap()
            .is_constant());
        let smooth = store_release_schedule(6.0, 16.0, 30.0, Some(0.1)).unwrap();
        assert!((smooth.evaluate(11.0) - 30.0).abs() < 1e-9);
        assert!((smooth.evaluate(6.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn ramps_are_monotone_and_end_resonant() {
        for shape in [
            RampShape::Power { exponent: 0.5 },
            RampShape::Power { exponent: 2.0 },
            RampShape::Knots {
                fractions: vec![0.9, 0.5, 0.1],
            },
        ] {
            let s = shaping_ramp_schedule(12.0, 8.0, &shape).unwrap();
            assert_eq!(s.evaluate(0.0), 12.0);
            assert_eq!(s.evaluate(8.0), 0.0);
            assert_eq!(s.evaluate(20.0), 0.0);
            let mut last = f64::INFINITY;
            for i in 0..=900 {
                let v = s.evaluate(i as f64 * 0.01);
                assert!(v <= last + 1e-12);
                last = v;
            }
        }
        let power = shaping_ramp_schedule(12.0, 8.0, &RampShape::Power { exponent: 2.0 }).unwrap();
        assert!((power.evaluate(4.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ramp_rejects_non_monotone() {
        let bad = RampShape::Knots {
            fractions: vec![0.5, 0.7],
        };
        assert!(shaping_ramp_schedule(10.0, 5.0, &bad).is_err());
        assert!(shaping_ramp_schedule(10.0, 5.0, &RampShape::Power { exponent: -1.0 }).is_err());
    }

    #[test]
    fn instantaneous_drop_is_resonant() {
        let s = shaping_ramp_schedule(12.0, 0.0, &RampShape::Power { exponent: 1.0 }).unwrap();
        assert_eq!(s, DetuningSchedule::constant(0.0));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let s = store_release_schedule(1.0, 4.0, 7.0, Some(0.3)).unwrap();
        for i in 0..100 {
            let t = i as f64 * 0.0517;
            assert_eq!(s.evaluate(t).to_bits(), s.evaluate(t).to_bits());
        }
    }
}
