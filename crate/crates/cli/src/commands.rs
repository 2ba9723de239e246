use std::path::Path;

use anyhow::{bail, Context, Result};
use qdc_core::analysis::{count_intensity_maxima, overlap_integral, tail_decay_rate};
use qdc_core::dynamics::default_time_step;
use qdc_core::experiments::{
    absorption_window, emission_window, run_absorption, run_emission, run_shaping, run_store_release,
    tune_shaping_ramp, RunSettings,
};
use qdc_core::sweep::{run_sweep, PointStatus, SweepFiles};
use qdc_core::units::{ps_to_uev, uev_to_ps};
use qdc_core::{gaussianity, SystemParams, Warning};

use crate::config::{RunConfig, UnitSystem};
use crate::output::{OutputDir, Summary};

/// Everything a command needs: the config as given, its natural-unit form and
/// where to write.
pub struct Run {
    pub command: &'static str,
    pub given: RunConfig,
    pub config: RunConfig,
    pub out: OutputDir,
    pub workers: Option<usize>,
}

impl Run {
    pub fn new(command: &'static str, given: RunConfig, out_override: Option<&Path>, workers: Option<usize>) -> Result<Self> {
        if let Some(e) = &given.experiment {
            if e != command {
                bail!("config was written for `{e}`, not `{command}`");
            }
        }
        let mut config = given.to_natural();
        if let Some(dir) = out_override {
            config.output.dir = dir.to_path_buf();
        }
        let out = OutputDir::create(&config.output.dir)?;
        Ok(Run {
            command,
            given,
            config,
            out,
            workers,
        })
    }

    fn params(&self) -> Result<SystemParams> {
        let params = self.config.params();
        params.validate().context("[system]")?;
        Ok(params)
    }

    fn settings(&self, params: &SystemParams, t_end: f64) -> RunSettings {
        RunSettings {
            dt: Some(self.config.integrator.dt.unwrap_or_else(|| default_time_step(params))),
            t_end: Some(t_end),
            continuum_stride: self.config.integrator.stride,
            track_norm: true,
        }
    }

    /// Writes the summary and a sidecar holding `resolved`, which reproduces
    /// the run when passed back as the config.
    fn finish(mut self, mut resolved: RunConfig, summary: Summary, warnings: &[String], notes: &[&str]) -> Result<()> {
        resolved.experiment = Some(self.command.to_string());
        resolved.output.dir = self.config.output.dir.clone();
        let mut sidecar = format!("# qdc {} {}\n", env!("CARGO_PKG_VERSION"), self.command);
        sidecar.push_str("# integrator: classical fixed-step RK4 on the discretized continuum\n");
        sidecar.push_str("# output field: exact inverse transform on the time lattice conjugate to the mode grid\n");
        if self.given.units.system == UnitSystem::UevPs {
            sidecar.push_str("# converted from ueV/ps: rates below are in 1/ps, times in ps\n");
        }
        for note in notes {
            sidecar.push_str(&format!("# {note}\n"));
        }
        sidecar.push_str("# this file is a complete config for rerunning the command\n");
        sidecar.push_str(&resolved.to_toml()?);
        self.out.write("summary.toml", summary.finish(warnings).as_bytes())?;
        self.out.write("metadata.toml", sidecar.as_bytes())?;
        for path in self.out.written() {
            eprintln!("wrote {}", path.display());
        }
        Ok(())
    }

    fn resolved(&self, params: &SystemParams, settings: &RunSettings) -> RunConfig {
        let mut r = self.config.clone();
        r.resolve_system(params);
        r.integrator.dt = settings.dt;
        r.integrator.t_end = settings.t_end;
        r.pulse.t0 = Some(r.pulse.t0.unwrap_or(5.0 * r.pulse.w));
        r
    }
}

fn messages(warnings: &[Warning]) -> Vec<String> {
    warnings.iter().map(|w| w.to_string()).collect()
}

fn describe_run(summary: &mut Summary, params: &SystemParams, settings: &RunSettings) {
    summary
        .value("omega_b", params.omega_b)
        .int("n_modes", params.n_modes)
        .value("dt", settings.dt.unwrap_or(f64::NAN))
        .value("t_end", settings.t_end.unwrap_or(f64::NAN));
}

pub fn absorb(mut run: Run) -> Result<()> {
    let params = run.params()?;
    let c = &run.config;
    let input = c.input();
    let envelope = input.envelope(&params)?;
    let t_end = c
        .integrator
        .t_end
        .unwrap_or_else(|| absorption_window(&params, envelope.end()).max(c.schedule.settle_time()));
    let settings = run.settings(&params, t_end);
    let result = run_absorption(&params, &input, &c.schedule, &settings)?;
    let reflection = overlap_integral(&result.output.pulse, &result.input, true)?;

    let floor = c.output.phase_floor;
    run.out.trajectory("trajectory.csv", &result.trajectory, &c.schedule)?;
    run.out.mode_map("mode_map.csv", &result.trajectory, &result.grid, c.integrator.mode_stride)?;
    run.out.pulse("input_pulse.csv", &result.input, floor)?;
    run.out.pulse("output_pulse.csv", &result.output.pulse, floor)?;

    let mut summary = Summary::new(run.command);
    summary
        .value("max_population", result.result.max_population)
        .value("t_at_max", result.result.t_at_max)
        .value("residual_at_end", result.result.residual_at_end)
        .value("output_norm", result.output.pulse.norm())
        .value("reflection_overlap", reflection.value)
        .value("reflection_shift", reflection.shift);
    describe_run(&mut summary, &result.params, &settings);
    let resolved = run.resolved(&result.params, &settings);
    run.finish(resolved, summary, &messages(&result.warnings), &[])
}

pub fn emit(mut run: Run) -> Result<()> {
    let params = run.params()?;
    let c = &run.config;
    let t_end = match c.integrator.t_end {
        Some(t) => t,
        None => emission_window(&params, &c.schedule)?,
    };
    let settings = run.settings(&params, t_end);
    let result = run_emission(&params, &c.schedule, &settings)?;
    let pulse = result.cropped_pulse()?;
    let magnitude = pulse.magnitude();
    let symmetry = overlap_integral(&magnitude, &magnitude.time_reversed_conjugate(0.0), true)?;

    let floor = c.output.phase_floor;
    run.out.trajectory("trajectory.csv", &result.trajectory, &c.schedule)?;
    run.out.mode_map("mode_map.csv", &result.trajectory, &result.grid, c.integrator.mode_stride)?;
    run.out.pulse("emitted_pulse.csv", &pulse, floor)?;

    let mut warnings = messages(&result.warnings);
    let mut summary = Summary::new(run.command);
    summary
        .value("emitted_norm", result.emitted.pulse.norm())
        .value("residual_at_end", result.emitted.residual)
        .value("peak_time", pulse.peak_time())
        .int("intensity_maxima", count_intensity_maxima(&pulse, 1e-3))
        .value("reversal_overlap", symmetry.value);
    match tail_decay_rate(&result.emitted.pulse, 0.1, 1e-6) {
        Some(rate) => summary.value("tail_decay_rate", rate),
        None => {
            warnings.push("tail decay rate undefined: intensity never falls from 0.1 to 1e-6 of its peak".into());
            &mut summary
        }
    };
    match gaussianity(&pulse) {
        Ok(fit) => summary.value("gaussianity_residual", fit.residual),
        Err(e) => {
            warnings.push(format!("no gaussian fit: {e}"));
            &mut summary
        }
    };
    describe_run(&mut summary, &result.params, &settings);
    let resolved = run.resolved(&result.params, &settings);
    run.finish(resolved, summary, &warnings, &[])
}

pub fn store_release(mut run: Run) -> Result<()> {
    let params = run.params()?;
    let c = &run.config;
    let mut settings = run.settings(&params, 0.0);
    settings.t_end = c.integrator.t_end;
    let result = run_store_release(&params, &c.store_release_config(), &settings)?;
    // The window the protocol picked, so the sidecar pins it.
    let t_end = match c.integrator.t_end {
        Some(t) => t,
        None => absorption_window(&params, result.input.end()).max(emission_window(&params, &result.schedule)?),
    };
    settings.t_end = Some(t_end);

    let floor = c.output.phase_floor;
    run.out.trajectory("trajectory.csv", &result.trajectory, &result.schedule)?;
    run.out.pulse("input_pulse.csv", &result.input, floor)?;
    run.out.pulse("output_pulse.csv", &result.output.pulse, floor)?;
    run.out.pulse("released_pulse.csv", &result.released, floor)?;

    let f = &result.fidelity;
    let mut summary = Summary::new(run.command);
    summary
        .value("t_store", result.t_store)
        .value("t_release", result.t_release)
        .value("delta_far", result.delta_far)
        .value("hold_retention", result.hold_retention)
        .value("release_conversion", result.release_conversion)
        .value("absorption", f.absorption)
        .value("release_overlap", f.release_overlap)
        .value("release_shift", f.release_shift)
        .value("fidelity", f.fidelity)
        .text("fidelity_definition", "absorption * release_overlap");
    describe_run(&mut summary, &result.params, &settings);

    let mut resolved = run.resolved(&result.params, &settings);
    resolved.store_release.t_store = Some(result.t_store);
    resolved.store_release.delta_far = Some(result.delta_far);
    resolved.store_release.hold = Some(result.t_release - result.t_store);
    run.finish(
        resolved,
        summary,
        &messages(&result.warnings),
        &["fidelity = peak dot population while absorbing * shift-optimized overlap of input and released pulse"],
    )
}

pub fn shape(mut run: Run) -> Result<()> {
    let params = run.params()?;
    let c = &run.config;
    let (ramp, source, evaluations) = match c.ramp() {
        Some(r) => (r, "config", 0),
        None => {
            let search = RunSettings {
                dt: c.integrator.dt,
                ..RunSettings::lean()
            };
            let (r, _, n) = tune_shaping_ramp(&params, &search)?;
            (r, "search", n)
        }
    };
    let t_end = match c.integrator.t_end {
        Some(t) => t,
        None => emission_window(&params, &ramp.schedule()?)?,
    };
    let settings = run.settings(&params, t_end);
    let result = run_shaping(&params, Some(ramp), &settings)?;

    let floor = c.output.phase_floor;
    run.out.trajectory("trajectory.csv", &result.emission.trajectory, &result.schedule)?;
    run.out.pulse("shaped_pulse.csv", &result.pulse, floor)?;

    let mut summary = Summary::new(run.command);
    summary
        .text("ramp_source", source)
        .int("search_evaluations", evaluations)
        .value("delta_start", ramp.delta_start)
        .value("ramp_end", ramp.ramp_end)
        .value("exponent", ramp.exponent)
        .value("gaussianity_residual", result.fit.residual)
        .value("fit_amplitude", result.fit.amplitude)
        .value("fit_center", result.fit.center)
        .value("fit_width", result.fit.width)
        .value("phase_excursion", result.phase_excursion)
        .value("emitted_norm", result.emission.emitted.pulse.norm());
    describe_run(&mut summary, &result.emission.params, &settings);

    let mut resolved = run.resolved(&result.emission.params, &settings);
    resolved.shape.delta_start = Some(ramp.delta_start);
    resolved.shape.ramp_end = Some(ramp.ramp_end);
    resolved.shape.exponent = Some(ramp.exponent);
    run.finish(
        resolved,
        summary,
        &messages(&result.emission.warnings),
        &["ramp: delta(t) = delta_start (1 - t/ramp_end)^exponent for t < ramp_end, then resonant"],
    )
}

pub fn sweep(run: Run) -> Result<()> {
    let spec = run.config.sweep.clone();
    let workers = run
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let files = SweepFiles::new(run.out.path("sweep.csv"));
    let outcome = run_sweep(&spec, workers, Some(&files))?;

    let mut warnings = Vec::new();
    let mut failed = 0;
    for p in &outcome.points {
        let at = format!("kappa/g = {}, w g = {}", p.point.kappa_over_g, p.point.w_times_g);
        match &p.status {
            PointStatus::Ok => {}
            PointStatus::Skipped(r) => warnings.push(format!("skipped {at}: {r}")),
            PointStatus::Failed(r) => {
                failed += 1;
                warnings.push(format!("failed {at}: {r}"))
            }
        }
    }
    let mut summary = Summary::new(run.command);
    summary
        .int("points", outcome.points.len())
        .int("resumed", outcome.resumed)
        .int("workers", workers)
        .int("failed", failed);
    if let Some((p, r)) = outcome.maximum() {
        summary
            .value("max_population", r.max_population)
            .value("max_kappa_over_g", p.kappa_over_g)
            .value("max_w_times_g", p.w_times_g);
    }
    summary.value("fraction_above_0_9", outcome.fraction_above(0.9));
    eprintln!("wrote {}", files.csv.display());
    eprintln!("wrote {}", files.metadata().display());
    let resolved = run.config.clone();
    run.finish(resolved, summary, &warnings, &["per-point rules and settings are listed in sweep.meta"])?;
    if failed > 0 {
        bail!("{failed} sweep point(s) failed; see summary.toml");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Direction {
    /// Energy in ueV to the time hbar / E in ps.
    UevToPs,
    /// Time in ps to the energy hbar / t in ueV.
    PsToUev,
}

pub fn convert_units(value: f64, direction: Direction) -> Result<String> {
    Ok(match direction {
        Direction::UevToPs => format!("{} ps", uev_to_ps(value)?),
        Direction::PsToUev => format!("{} ueV", ps_to_uev(value)?),
    })
}
