//! Subcommand pipelines.

use std::f64::consts::PI;
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};

use ionphoton::analysis::{
    bootstrap, coherence, phase_slope, phase_vs_timebin, sinusoid_fit, witness_report, TimeBinOptions, WitnessReport,
};
use ionphoton::budget::{detection_budget, free_space_collection, output_coupling};
use ionphoton::dynamics::{joint, mixing_angle_and_phase, target_state, SystemParams, US};
use ionphoton::linalg::{Ket, Operator};
use ionphoton::measurement::{parse_event_log, run_experiment, BasisSetting, CountTable, PhotonSource};
use ionphoton::tomography::{mle_reconstruct, MleOptions, TomographyError};
use log::info;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::output::OutputDir;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::NonConvergence(_) => 3,
            _ => 2,
        }
    }
}

fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Settings shared by every subcommand after flags override the config.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn seed(&self) -> Result<u64, CliError> {
        self.config.run.seed.ok_or_else(|| CliError::Usage("this command is stochastic: pass --seed or set [run] seed".into()))
    }

    fn output(&self) -> OutputDir {
        OutputDir::new(&self.out)
    }

    fn finish(&self, dir: OutputDir, command: &str) -> Result<(), CliError> {
        dir.finish(command, &self.config.to_canonical(), self.config.run.seed).map_err(io_at(&self.out))
    }

    fn write(&self, dir: &mut OutputDir, name: &str, contents: &str) -> Result<(), CliError> {
        dir.write(name, contents).map_err(io_at(&self.out.join(name)))?;
        Ok(())
    }
}

fn read_counts(path: &Path) -> Result<CountTable, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    text.parse::<CountTable>().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn target_of(params: &SystemParams) -> Result<Ket, CliError> {
    let (alpha, phi) = mixing_angle_and_phase(params).map_err(data)?;
    Ok(target_state(alpha, phi))
}

/// Reconstructs `counts`, failing with a non-convergence error naming
/// `label` when the iteration limit is hit.
fn reconstruct_converged(counts: &CountTable, label: &str) -> Result<Operator, CliError> {
    let result = mle_reconstruct(counts, MleOptions::default()).map_err(data)?;
    if !result.converged {
        return Err(CliError::NonConvergence(format!("{label}: reconstruction did not converge: {}", result.summary())));
    }
    Ok(result.rho_hat)
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let seed = ctx.seed()?;
    let source = PhotonSource::new(&cfg.system, cfg.run.points).map_err(data)?;
    let n = cfg.run.sequences_per_setting;
    let exp = run_experiment(&source, &cfg.noise, &BasisSetting::all(), n, seed).map_err(data)?;
    let mut dir = ctx.output();
    ctx.write(&mut dir, "events.csv", &exp.event_log())?;
    ctx.write(&mut dir, "counts.csv", &exp.counts.to_string())?;
    ctx.finish(dir, "simulate")?;
    let sequences = exp.counts.sequences();
    let detected = exp.counts.detected();
    let fraction = if sequences > 0 { detected as f64 / sequences as f64 } else { 0.0 };
    println!("generation probability {:.4}", source.generation_probability());
    println!("detected {detected} of {sequences} sequences ({:.3}%)", 100.0 * fraction);
    Ok(())
}

pub fn reconstruct(ctx: &Context, counts_path: &Path) -> Result<(), CliError> {
    let counts = read_counts(counts_path)?;
    let result = mle_reconstruct(&counts, MleOptions::default()).map_err(data)?;
    let mut dir = ctx.output();
    ctx.write(&mut dir, "rho.txt", &result.rho_hat.to_string())?;
    ctx.write(&mut dir, "tomography.json", &format!("{}\n", result.summary()))?;
    ctx.finish(dir, "reconstruct")?;
    println!("{}", result.summary());
    if !result.converged {
        return Err(CliError::NonConvergence(format!(
            "reconstruction did not converge within {} iterations",
            result.iterations
        )));
    }
    Ok(())
}

fn bin_table(bins: &[ionphoton::analysis::TimeBinPhase]) -> String {
    let mut out = String::from("start_us,end_us,center_us,events,phase,phase_std\n");
    for b in bins {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6},{},{:.6},{:.6}",
            b.start / US,
            b.end / US,
            b.center / US,
            b.events,
            b.phase,
            b.std
        );
    }
    out
}

pub fn analyze(ctx: &Context, counts_path: &Path, events_path: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let seed = ctx.seed()?;
    let counts = read_counts(counts_path)?;
    let target = target_of(&cfg.system)?;
    reconstruct_converged(&counts, &counts_path.display().to_string())?;
    let report = witness_report(&counts, &target, cfg.run.resamples, seed, MleOptions::default()).map_err(data)?;
    let mut dir = ctx.output();
    ctx.write(&mut dir, "witness.txt", &report.to_record())?;
    print!("{}", report.to_record());
    if let Some(path) = events_path {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        let events = parse_event_log(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let opts = TimeBinOptions {
            bins: cfg.run.bins,
            min_events: cfg.run.min_bin_events,
            resamples: cfg.run.resamples,
            seed,
            mle: MleOptions::default(),
        };
        let bins = phase_vs_timebin(&events, opts).map_err(data)?;
        ctx.write(&mut dir, "phase_bins.csv", &bin_table(&bins))?;
        match phase_slope(&bins) {
            Some((slope, sigma)) => {
                let text = format!("slope_rad_per_us = {:.6}\nslope_std_rad_per_us = {:.6}\n", slope * US, sigma * US);
                print!("{text}");
                ctx.write(&mut dir, "phase_slope.txt", &text)?;
            }
            None => println!("single time bin: no phase slope"),
        }
    }
    ctx.finish(dir, "analyze")
}

const REPORT_HEADER: &str = "fidelity,fidelity_std,concurrence,concurrence_std,chsh,chsh_std,coherence_phase,coherence_phase_std";

fn report_columns(r: &WitnessReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.fidelity,
        r.fidelity_std,
        r.concurrence,
        r.concurrence_std,
        r.chsh,
        r.chsh_std,
        r.coherence_phase,
        r.coherence_phase_std
    )
}

/// Simulates and reconstructs one sweep point; point `k` uses `seed + k`.
fn sweep_point(
    ctx: &Context,
    source: &PhotonSource,
    target: &Ket,
    seed: u64,
    k: usize,
) -> Result<(CountTable, Operator, WitnessReport), CliError> {
    let cfg = &ctx.config;
    let point_seed = seed.wrapping_add(k as u64);
    let exp = run_experiment(source, &cfg.noise, &BasisSetting::all(), cfg.run.sequences_per_setting, point_seed)
        .map_err(data)?;
    let rho = reconstruct_converged(&exp.counts, &format!("sweep point {k}"))?;
    let report = witness_report(&exp.counts, target, cfg.run.resamples, point_seed, MleOptions::default()).map_err(data)?;
    Ok((exp.counts, rho, report))
}

pub fn sweep_phase(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let phases: Vec<f64> = cfg.sweep.phases_pi.iter().map(|p| p * PI).collect();
    let mut distinct: Vec<f64> = phases.iter().map(|p| p.rem_euclid(2.0 * PI)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if distinct.len() < 2 {
        return Err(CliError::Data(format!(
            "phase sweep needs at least 2 distinct phases for the sinusoid fit, got {}",
            distinct.len()
        )));
    }
    let seed = ctx.seed()?;
    let mut dir = ctx.output();
    let mut table = format!("phase_pi,re_coherence,im_coherence,detected,{REPORT_HEADER}\n");
    let (mut re, mut im) = (Vec::new(), Vec::new());
    for (k, &phase) in phases.iter().enumerate() {
        info!("phase point {k}: {:.4}π", phase / PI);
        let params = SystemParams { raman_phase: phase, ..cfg.system.clone() };
        let source = if cfg.sweep.calibrate_phase {
            PhotonSource::with_calibrated_phase(&params, phase, cfg.noise.detection_window, cfg.run.points)
        } else {
            PhotonSource::new(&params, cfg.run.points)
        }
        .map_err(data)?;
        let (alpha, _) = mixing_angle_and_phase(&params).map_err(data)?;
        let (counts, rho, report) = sweep_point(ctx, &source, &target_state(alpha, phase), seed, k)?;
        let c = coherence(&rho);
        re.push(c.re);
        im.push(c.im);
        let _ = writeln!(table, "{},{:.6},{:.6},{},{}", phase / PI, c.re, c.im, counts.detected(), report_columns(&report));
        ctx.write(&mut dir, &format!("counts_phase_{k}.csv"), &counts.to_string())?;
        ctx.write(&mut dir, &format!("rho_phase_{k}.txt"), &rho.to_string())?;
    }
    let fit = sinusoid_fit(&phases, &re, &im).map_err(data)?;
    let mut fit_text = String::new();
    let _ = writeln!(fit_text, "contrast = {:.6}", fit.contrast);
    let _ = writeln!(fit_text, "amplitude = {:.6}", fit.amplitude);
    let _ = writeln!(fit_text, "phase_offset = {:.6}", fit.phase_offset);
    let mut curve = String::from("phase_pi,re_fit,im_fit\n");
    for j in 0..=100 {
        let phase = 2.0 * PI * j as f64 / 100.0;
        let (a, b) = fit.evaluate(phase);
        let _ = writeln!(curve, "{:.4},{a:.6},{b:.6}", phase / PI);
    }
    ctx.write(&mut dir, "sweep_phase.csv", &table)?;
    ctx.write(&mut dir, "fit.txt", &fit_text)?;
    ctx.write(&mut dir, "fit_curve.csv", &curve)?;
    ctx.finish(dir, "sweep-phase")?;
    print!("{table}{fit_text}");
    Ok(())
}

pub fn sweep_amplitude(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    if cfg.sweep.amplitudes.is_empty() {
        return Err(CliError::Data("amplitude sweep has no points".into()));
    }
    let seed = ctx.seed()?;
    let mut dir = ctx.output();
    let mut table = format!("cos_alpha,target_rho11,rho11,rho11_std,rho44,detected,{REPORT_HEADER}\n");
    for (k, &cos_alpha) in cfg.sweep.amplitudes.iter().enumerate() {
        info!("amplitude point {k}: cos α = {cos_alpha:.4}");
        let params = cfg.system.clone().with_mixing_angle(cos_alpha.acos());
        let source = PhotonSource::new(&params, cfg.run.points).map_err(data)?;
        let target = target_of(&params)?;
        let (counts, rho, report) = sweep_point(ctx, &source, &target, seed, k)?;
        let population = |c: &CountTable| -> Result<f64, TomographyError> {
            Ok(mle_reconstruct(c, MleOptions::default())?.rho_hat[(joint::DH, joint::DH)].re)
        };
        let std = bootstrap(&counts, &population, cfg.run.resamples, seed.wrapping_add(k as u64)).map_err(data)?.std;
        let _ = writeln!(
            table,
            "{cos_alpha:.6},{:.6},{:.6},{std:.6},{:.6},{},{}",
            cos_alpha * cos_alpha,
            rho[(joint::DH, joint::DH)].re,
            rho[(joint::DPV, joint::DPV)].re,
            counts.detected(),
            report_columns(&report)
        );
        ctx.write(&mut dir, &format!("counts_amplitude_{k}.csv"), &counts.to_string())?;
        ctx.write(&mut dir, &format!("rho_amplitude_{k}.txt"), &rho.to_string())?;
    }
    ctx.write(&mut dir, "sweep_amplitude.csv", &table)?;
    ctx.finish(dir, "sweep-amplitude")?;
    print!("{table}");
    Ok(())
}

pub fn pulse_shape(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let source = PhotonSource::new(&cfg.system, cfg.run.points).map_err(data)?;
    let pulse = &source.pulse;
    let mut dir = ctx.output();
    ctx.write(&mut dir, "pulse_h.csv", &pulse.to_table(false))?;
    ctx.write(&mut dir, "pulse_v.csv", &pulse.to_table(true))?;
    ctx.finish(dir, "pulse-shape")?;
    println!("generation probability {:.4}", pulse.generation_probability());
    println!("H {:.4}  V {:.4}", pulse.probability_h(), pulse.probability_v());
    Ok(())
}

pub fn budget(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let source = PhotonSource::new(&cfg.system, cfg.run.points).map_err(data)?;
    let b = &cfg.budget;
    let coupling = output_coupling(b.mirrors).map_err(data)?;
    let free_space = free_space_collection(b.numerical_aperture).map_err(data)?;
    println!("{:<28}{:>10.4}", "mirror output coupling", coupling);
    println!("{:<28}{:>10.4}", "free-space collection", free_space);
    print!("{}", detection_budget(source.generation_probability(), &cfg.noise, b.sequence_duration));
    Ok(())
}
