//! File writers. Numbers are written with the shortest representation that
//! round-trips, so reruns produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use qdc_core::dynamics::Trajectory;
use qdc_core::{phase_profile, ContinuumGrid, DetuningSchedule, PulseEnvelope};

pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        self.write(name, &bytes)
    }

    /// Columns `t, re_f, im_f, abs2_f, phase`; phase is blank where masked.
    pub fn pulse(&mut self, name: &str, pulse: &PulseEnvelope, phase_floor: f64) -> Result<()> {
        let phase = phase_profile(pulse, phase_floor).map(|p| p.phase).unwrap_or_else(|_| vec![None; pulse.len()]);
        let rows = pulse.amplitudes().iter().zip(phase).enumerate().map(|(i, (a, p))| {
            vec![
                num(pulse.time(i)),
                num(a.re),
                num(a.im),
                num(a.norm_sqr()),
                p.map_or(String::new(), num),
            ]
        });
        self.write_csv(name, &["t", "re_f", "im_f", "abs2_f", "phase"], rows)
    }

    /// Columns `t, abs2_cav, abs2_qd, norm, detuning`; norm is blank if untracked.
    pub fn trajectory(&mut self, name: &str, traj: &Trajectory, schedule: &DetuningSchedule) -> Result<()> {
        let rows = (0..traj.len()).map(|i| {
            let t = traj.time(i);
            vec![
                num(t),
                num(traj.cavity[i].norm_sqr()),
                num(traj.dot[i].norm_sqr()),
                traj.norm.get(i).map_or(String::new(), |n| num(*n)),
                num(schedule.evaluate(t)),
            ]
        });
        self.write_csv(name, &["t", "abs2_cav", "abs2_qd", "norm", "detuning"], rows)
    }

    /// Long-format map of `|c_k(t)|^2`, columns `t, detuning, abs2`.
    pub fn mode_map(&mut self, name: &str, traj: &Trajectory, grid: &ContinuumGrid, mode_stride: usize) -> Result<()> {
        let detunings = grid.detunings();
        let rows = traj.snapshots.iter().flat_map(|s| {
            s.continuum
                .iter()
                .zip(detunings)
                .step_by(mode_stride)
                .map(move |(c, d)| vec![num(s.time), num(*d), num(c.norm_sqr())])
        });
        self.write_csv(name, &["t", "detuning", "abs2"], rows)
    }
}

pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Key-value run summary with a trailing warnings section.
pub struct Summary {
    text: String,
}

impl Summary {
    pub fn new(command: &str) -> Self {
        let mut s = Summary { text: String::new() };
        s.text("command", command);
        s
    }

    pub fn value(&mut self, key: &str, value: f64) -> &mut Self {
        let _ = writeln!(self.text, "{key} = {}", toml_float(value));
        self
    }

    pub fn int(&mut self, key: &str, value: usize) -> &mut Self {
        let _ = writeln!(self.text, "{key} = {value}");
        self
    }

    pub fn text(&mut self, key: &str, value: &str) -> &mut Self {
        let _ = writeln!(self.text, "{key} = {value:?}");
        self
    }

    pub fn finish(mut self, warnings: &[String]) -> String {
        self.text.push_str("\n[warnings]\n");
        let list: Vec<String> = warnings.iter().map(|w| format!("{w:?}")).collect();
        let _ = writeln!(self.text, "count = {}", list.len());
        let _ = writeln!(self.text, "messages = [{}]", list.join(", "));
        self.text
    }
}

fn toml_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else if x == x.trunc() && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        num(x)
    }
}
