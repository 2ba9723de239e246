//! Absorption maps over a `(kappa, w)` grid at fixed `g`.
//!
//! Every grid point is an independent simulation with its own band, mode
//! count, step and window. Points run in parallel on a rayon pool; one writer
//! appends finished points to a partial file so an interrupted sweep resumes
//! where it stopped, and the final CSV is written in grid order.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::AbsorptionResult;
use crate::error::{Error, Result};
use crate::experiments::{absorption_window, run_absorption, InputPulse, RunSettings};
use crate::model::SystemParams;
use crate::schedule::DetuningSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub spacing: Spacing,
}

impl Axis {
    pub fn log(min: f64, max: f64, points: usize) -> Self {
        Axis {
            min,
            max,
            points,
            spacing: Spacing::Log,
        }
    }

    pub fn linear(min: f64, max: f64, points: usize) -> Self {
        Axis {
            min,
            max,
            points,
            spacing: Spacing::Linear,
        }
    }

    /// A single-point axis.
    pub fn single(value: f64) -> Self {
        Axis::linear(value, value, 1)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidSweep(format!("{name}: {reason}")));
        if self.points == 0 {
            return bad("needs at least one point".into());
        }
        if !(self.min > 0.0) || !self.max.is_finite() || self.max < self.min {
            return bad(format!("need 0 < min <= max, got [{}, {}]", self.min, self.max));
        }
        if self.points == 1 && self.min != self.max {
            return bad("a one-point axis needs min = max".into());
        }
        if self.points > 1 && self.min == self.max {
            return bad("several points on an empty range".into());
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|i| {
                if i == 0 {
                    return self.min;
                }
                if i + 1 == n {
                    return self.max;
                }
                let x = i as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Linear => self.min + (self.max - self.min) * x,
                    Spacing::Log => self.min * (self.max / self.min).powf(x),
                }
            })
            .collect()
    }
}

/// Rules deriving each point's band, step and mode count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRules {
    /// `omega_b = max(band_per_kappa * kappa, band_per_g * g, band_per_bandwidth / w)`.
    pub band_per_kappa: f64,
    pub band_per_g: f64,
    pub band_per_bandwidth: f64,
    /// `dt = step_fraction / omega_b`.
    pub step_fraction: f64,
    /// Upper bound on the mode count; points needing more are skipped.
    pub max_modes: usize,
}

impl Default for PointRules {
    fn default() -> Self {
        PointRules {
            band_per_kappa: 20.0,
            band_per_g: 10.0,
            band_per_bandwidth: 5.0,
            step_fraction: 0.1,
            max_modes: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "one")]
    pub g: f64,
    #[serde(default)]
    pub gamma: f64,
    pub kappa_over_g: Axis,
    pub w_times_g: Axis,
    #[serde(default)]
    pub schedule: DetuningSchedule,
    #[serde(default)]
    pub rules: PointRules,
}

fn one() -> f64 {
    1.0
}

impl SweepSpec {
    /// The default map: 40 x 40 log-spaced points over `[0.2, 5]` on both axes.
    pub fn fig2a() -> Self {
        SweepSpec {
            g: 1.0,
            gamma: 0.0,
            kappa_over_g: Axis::log(0.2, 5.0, 40),
            w_times_g: Axis::log(0.2, 5.0, 40),
            schedule: DetuningSchedule::default(),
            rules: PointRules::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) || !self.g.is_finite() {
            return Err(Error::InvalidSweep(format!("g must be > 0, got {}", self.g)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidSweep(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        self.kappa_over_g.validate("kappa_over_g")?;
        self.w_times_g.validate("w_times_g")?;
        self.schedule.validate()?;
        let r = &self.rules;
        if !(r.step_fraction > 0.0 && r.step_fraction <= 0.1) {
            return Err(Error::InvalidSweep(format!(
                "step_fraction must lie in (0, 0.1], got {}",
                r.step_fraction
            )));
        }
        if [r.band_per_kappa, r.band_per_g, r.band_per_bandwidth]
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidSweep("band factors must be finite and >= 0".into()));
        }
        if r.band_per_kappa <= 5.0 {
            return Err(Error::InvalidSweep(format!(
                "band_per_kappa must exceed 5 to keep 2 omega_b > 10 kappa, got {}",
                r.band_per_kappa
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        let kappas = self.kappa_over_g.values();
        let widths = self.w_times_g.values();
        let mut points = Vec::with_capacity(kappas.len() * widths.len());
        for (i, &k) in kappas.iter().enumerate() {
            for (j, &w) in widths.iter().enumerate() {
                points.push(GridPoint {
                    i_kappa: i,
                    i_w: j,
                    kappa_over_g: k,
                    w_times_g: w,
                });
            }
        }
        points
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub i_kappa: usize,
    pub i_w: usize,
    pub kappa_over_g: f64,
    pub w_times_g: f64,
}

/// Everything a single point simulation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSetup {
    pub params: SystemParams,
    pub input: InputPulse,
    pub settings: RunSettings,
    pub t_end: f64,
    pub dt: f64,
}

/// Derives band, mode count, window and step for one point. The mode count is
/// the smallest power of two with spacing below `kappa/10` and a recurrence
/// time above `1.1 T`.
pub fn point_setup(spec: &SweepSpec, kappa_over_g: f64, w_times_g: f64) -> Result<PointSetup> {
    let g = spec.g;
    let kappa = kappa_over_g * g;
    let w = w_times_g / g;
    let r = &spec.rules;
    let omega_b = (r.band_per_kappa * kappa)
        .max(r.band_per_g * g)
        .max(r.band_per_bandwidth / w);
    let base = SystemParams {
        g,
        kappa,
        gamma: spec.gamma,
        delta_c: 0.0,
        omega_b,
        n_modes: 2,
    };
    let t_end = absorption_window(&base, 10.0 * w).max(spec.schedule.settle_time());
    let mut n_modes = 2usize;
    while !(base.omega_b * 2.0 / n_modes as f64 * 10.0 < kappa
        && std::f64::consts::PI * n_modes as f64 / omega_b > 1.1 * t_end)
    {
        if n_modes >= r.max_modes {
            return Err(Error::InvalidSweep(format!(
                "needs more than {} modes",
                r.max_modes
            )));
        }
        n_modes *= 2;
    }
    let params = SystemParams { n_modes, ..base };
    let dt = r.step_fraction / omega_b;
    Ok(PointSetup {
        params,
        input: InputPulse::gaussian(w),
        settings: RunSettings {
            dt: Some(dt),
            t_end: Some(t_end),
            ..RunSettings::lean()
        },
        t_end,
        dt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointStatus {
    Ok,
    /// The point violates a guard that the per-point rules cannot fix.
    Skipped(String),
    Failed(String),
}

impl PointStatus {
    fn label(&self) -> String {
        match self {
            PointStatus::Ok => "ok".into(),
            PointStatus::Skipped(r) => format!("skipped: {}", r),
            PointStatus::Failed(r) => format!("failed: {}", r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointOutcome {
    pub point: GridPoint,
    pub result: Option<AbsorptionResult>,
    pub status: PointStatus,
}

/// Runs one grid point exactly as the sweep does.
pub fn simulate_point(spec: &SweepSpec, point: GridPoint) -> PointOutcome {
    let setup = match point_setup(spec, point.kappa_over_g, point.w_times_g) {
        Ok(s) => s,
        Err(e) => {
            return PointOutcome {
                point,
                result: None,
                status: PointStatus::Skipped(e.to_string()),
            }
        }
    };
    match run_absorption(&setup.params, &setup.input, &spec.schedule, &setup.settings) {
        Ok(run) => PointOutcome {
            point,
            result: Some(run.result),
            status: PointStatus::Ok,
        },
        Err(e) => PointOutcome {
            point,
            result: None,
            status: PointStatus::Failed(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// In grid order: `kappa` index major, `w` index minor.
    pub points: Vec<PointOutcome>,
    /// Points taken from an earlier partial run.
    pub resumed: usize,
}

impl SweepOutcome {
    pub fn successful(&self) -> impl Iterator<Item = (&GridPoint, &AbsorptionResult)> {
        self.points
            .iter()
            .filter_map(|p| p.result.as_ref().map(|r| (&p.point, r)))
    }

    pub fn maximum(&self) -> Option<(GridPoint, AbsorptionResult)> {
        self.successful()
            .fold(None, |best: Option<(GridPoint, AbsorptionResult)>, (p, r)| match best {
                Some((_, b)) if b.max_population >= r.max_population => best,
                _ => Some((*p, *r)),
            })
    }

    /// Fraction of all grid points whose maximum population exceeds `level`.
    pub fn fraction_above(&self, level: f64) -> f64 {
        let above = self
            .successful()
            .filter(|(_, r)| r.max_population > level)
            .count();
        above as f64 / self.points.len() as f64
    }

    /// CSV with columns `kappa_over_g, w_times_g, max_population, t_at_max,
    /// residual, status`, one row per point in grid order.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_HEADER)?;
        for p in &self.points {
            writer.write_record(record(p))?;
        }
        writer
            .into_inner()
            .map_err(|e| Error::Io(e.into_error()))
    }
}

pub const CSV_HEADER: [&str; 6] = [
    "kappa_over_g",
    "w_times_g",
    "max_population",
    "t_at_max",
    "residual",
    "status",
];

/// Shortest round-trip form, with an exponent for very small or large values.
fn number(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn record(p: &PointOutcome) -> [String; 6] {
    let value = |f: fn(&AbsorptionResult) -> f64| p.result.as_ref().map_or(String::new(), |r| number(f(r)));
    [
        number(p.point.kappa_over_g),
        number(p.point.w_times_g),
        value(|r| r.max_population),
        value(|r| r.t_at_max),
        value(|r| r.residual_at_end),
        p.status.label(),
    ]
}

/// Where a sweep persists its results.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFiles {
    pub csv: PathBuf,
}

impl SweepFiles {
    pub fn new(csv: impl Into<PathBuf>) -> Self {
        SweepFiles { csv: csv.into() }
    }

    pub fn partial(&self) -> PathBuf {
        self.csv.with_extension("partial")
    }

    pub fn metadata(&self) -> PathBuf {
        self.csv.with_extension("meta")
    }
}

/// Runs every grid point on `workers` threads.
///
/// With `files`, finished points are appended to a partial file as they
/// complete and a matching partial file from an interrupted run is resumed.
/// The final CSV and metadata sidecar are written at the end and the partial
/// file removed.
pub fn run_sweep(spec: &SweepSpec, workers: usize, files: Option<&SweepFiles>) -> Result<SweepOutcome> {
    spec.validate()?;
    if workers == 0 {
        return Err(Error::InvalidSweep("worker count must be >= 1".into()));
    }
    let grid = spec.grid();
    let fingerprint = fingerprint(spec);
    let mut done: BTreeMap<(usize, usize), PointOutcome> = BTreeMap::new();
    if let Some(files) = files {
        done = load_partial(&files.partial(), &fingerprint, &grid)?;
    }
    let resumed = done.len();
    let pending: Vec<GridPoint> = grid
        .iter()
        .filter(|p| !done.contains_key(&(p.i_kappa, p.i_w)))
        .copied()
        .collect();

    let mut partial = match files {
        Some(files) => Some(open_partial(&files.partial(), &fingerprint, resumed > 0)?),
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidSweep(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<PointOutcome>();
    let writer = std::thread::spawn(move || -> Result<Vec<PointOutcome>> {
        let mut finished = Vec::new();
        for outcome in rx {
            if let Some(file) = partial.as_mut() {
                write_partial_row(file, &outcome)?;
            }
            finished.push(outcome);
        }
        Ok(finished)
    });
    pool.install(|| {
        pending
            .par_iter()
            .for_each_with(tx, |tx, p| {
                // The receiver only disappears if the writer failed; that error
                // is reported when it is joined.
                let _ = tx.send(simulate_point(spec, *p));
            })
    });
    let finished = writer
        .join()
        .map_err(|_| Error::InvalidSweep("result writer panicked".into()))??;
    for outcome in finished {
        done.insert((outcome.point.i_kappa, outcome.point.i_w), outcome);
    }
    let outcome = SweepOutcome {
        points: done.into_values().collect(),
        resumed,
    };
    if let Some(files) = files {
        write_atomically(&files.csv, &outcome.to_csv()?)?;
        write_atomically(&files.metadata(), metadata_text(spec).as_bytes())?;
        fs::remove_file(files.partial())?;
    }
    Ok(outcome)
}

/// Key-value description of the spec and the per-point rules.
pub fn metadata_text(spec: &SweepSpec) -> String {
    let r = &spec.rules;
    let axis = |a: &Axis| {
        format!(
            "{} {} points from {} to {}",
            match a.spacing {
                Spacing::Linear => "linear",
                Spacing::Log => "log",
            },
            a.points,
            a.min,
            a.max
        )
    };
    let mut lines = vec![
        format!("code_version = {}", env!("CARGO_PKG_VERSION")),
        format!("g = {}", spec.g),
        format!("gamma = {}", spec.gamma),
        format!("kappa_over_g = {}", axis(&spec.kappa_over_g)),
        format!("w_times_g = {}", axis(&spec.w_times_g)),
        format!("schedule = {:?}", spec.schedule),
        "input = gaussian, t0 = 5w".to_string(),
        format!(
            "omega_b_rule = max({} kappa, {} g, {} / w)",
            r.band_per_kappa, r.band_per_g, r.band_per_bandwidth
        ),
        format!("dt_rule = {} / omega_b", r.step_fraction),
        "t_rule = max(10 w + 10 / kappa_eff, 20 / g), kappa_eff = min(kappa, 4 g^2 / kappa)".to_string(),
        "n_modes_rule = smallest power of two with 2 omega_b / N < kappa / 10 and pi N / omega_b > 1.1 T".to_string(),
        format!("max_modes = {}", r.max_modes),
        "columns = i_kappa, i_w, omega_b, n_modes, dt, t_end".to_string(),
    ];
    for p in spec.grid() {
        let line = match point_setup(spec, p.kappa_over_g, p.w_times_g) {
            Ok(s) => format!(
                "point = {}, {}, {}, {}, {}, {}",
                p.i_kappa, p.i_w, s.params.omega_b, s.params.n_modes, s.dt, s.t_end
            ),
            Err(e) => format!("point = {}, {}, skipped: {}", p.i_kappa, p.i_w, e),
        };
        lines.push(line);
    }
    lines.push(String::new());
    lines.join("\n")
}

fn fingerprint(spec: &SweepSpec) -> String {
    format!("# qdc sweep {} {:?}", env!("CARGO_PKG_VERSION"), spec)
}

fn open_partial(path: &Path, fingerprint: &str, resume: bool) -> Result<File> {
    if resume {
        return Ok(OpenOptions::new().append(true).open(path)?);
    }
    let mut file = File::create(path)?;
    writeln!(file, "{fingerprint}")?;
    writeln!(file, "i_kappa,i_w,{}", CSV_HEADER.join(","))?;
    file.flush()?;
    Ok(file)
}

fn write_partial_row(file: &mut File, outcome: &PointOutcome) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut row = vec![outcome.point.i_kappa.to_string(), outcome.point.i_w.to_string()];
    row.extend(record(outcome));
    writer.write_record(&row)?;
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(())
}

/// Reads finished points from a partial file written for the same spec. A
/// missing file, a different spec or a truncated last line are not errors.
fn load_partial(
    path: &Path,
    fingerprint: &str,
    grid: &[GridPoint],
) -> Result<BTreeMap<(usize, usize), PointOutcome>> {
    let mut done = BTreeMap::new();
    let Ok(file) = File::open(path) else {
        return Ok(done);
    };
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != fingerprint {
        return Ok(done);
    }
    let mut body = String::new();
    std::io::Read::read_to_string(&mut reader, &mut body)?;
    let complete = match body.rfind('\n') {
        Some(end) => &body[..=end],
        None => "",
    };
    let mut rows = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(complete.as_bytes());
    for row in rows.records() {
        let Ok(row) = row else { continue };
        if let Some(outcome) = parse_partial_row(&row, grid) {
            done.insert((outcome.point.i_kappa, outcome.point.i_w), outcome);
        }
    }
    Ok(done)
}

fn parse_partial_row(row: &csv::StringRecord, grid: &[GridPoint]) -> Option<PointOutcome> {
    if row.len() != 8 {
        return None;
    }
    let i: usize = row[0].parse().ok()?;
    let j: usize = row[1].parse().ok()?;
    let point = *grid.iter().find(|p| p.i_kappa == i && p.i_w == j)?;
    let status = &row[7];
    let (result, status) = if status == "ok" {
        let result = AbsorptionResult {
            max_population: row[4].parse().ok()?,
            t_at_max: row[5].parse().ok()?,
            residual_at_end: row[6].parse().ok()?,
        };
        (Some(result), PointStatus::Ok)
    } else if let Some(reason) = status.strip_prefix("skipped: ") {
        (None, PointStatus::Skipped(reason.to_string()))
    } else if let Some(reason) = status.strip_prefix("failed: ") {
        (None, PointStatus::Failed(reason.to_string()))
    } else {
        return None;
    };
    Some(PointOutcome {
        point,
        result,
        status,
    })
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_values() {
        let log = Axis::log(0.2, 5.0, 3).values();
        assert_eq!(log[0], 0.2);
        assert_eq!(log[2], 5.0);
        assert!((log[1] - 1.0).abs() < 1e-15);
        assert_eq!(Axis::linear(1.0, 2.0, 5).values(), vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        assert_eq!(Axis::single(0.7).values(), vec![0.7]);
    }

    #[test]
    fn axis_validation() {
        assert!(Axis::log(0.0, 1.0, 3).validate("a").is_err());
        assert!(Axis::log(2.0, 1.0, 3).validate("a").is_err());
        assert!(Axis::linear(1.0, 2.0, 1).validate("a").is_err());
        assert!(Axis::linear(1.0, 2.0, 0).validate("a").is_err());
        assert!(Axis::single(1.0).validate("a").is_ok());
    }

    #[test]
    fn point_rules() {
        let spec = SweepSpec::fig2a();
        let s = point_setup(&spec, 1.0, 1.0).unwrap();
        assert_eq!(s.params.omega_b, 20.0);
        assert_eq!(s.t_end, 20.0);
        assert_eq!(s.dt, 0.005);
        // spacing 40/N < 0.1 and pi N / 20 > 22
        assert_eq!(s.params.n_modes, 512);
        assert!(s.params.validity_warnings().is_empty());

        let narrow = point_setup(&spec, 0.2, 0.2).unwrap();
        assert_eq!(narrow.params.omega_b, 25.0);
        let weak = point_setup(&spec, 5.0, 5.0).unwrap();
        assert!((weak.t_end - 62.5).abs() < 1e-12);
        assert!(weak.params.recurrence_time() > 1.1 * weak.t_end);
    }

    #[test]
    fn metadata_lists_every_point() {
        let spec = SweepSpec {
            kappa_over_g: Axis::log(0.5, 2.0, 2),
            w_times_g: Axis::log(0.5, 2.0, 3),
            ..SweepSpec::fig2a()
        };
        let text = metadata_text(&spec);
        assert_eq!(text.lines().filter(|l| l.starts_with("point = ")).count(), 6);
        assert!(text.contains("dt_rule = 0.1 / omega_b"));
    }

    #[test]
    fn partial_rows_round_trip() {
        let spec = SweepSpec::fig2a();
        let grid = spec.grid();
        let outcome = PointOutcome {
            point: grid[41],
            result: Some(AbsorptionResult {
                max_population: 0.123456789012345678,
                t_at_max: 3.0e-7,
                residual_at_end: 1.0 / 3.0,
            }),
            status: PointStatus::Ok,
        };
        let mut row = vec!["1".to_string(), "1".to_string()];
        row.extend(record(&outcome));
        let parsed = parse_partial_row(&csv::StringRecord::from(row), &grid).unwrap();
        assert_eq!(parsed, outcome);
    }
}
