//! INI run configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ini::Ini;
use ionphoton::budget::MirrorBudget;
use ionphoton::dynamics::{SystemParams, MHZ, US};
use ionphoton::measurement::NoiseModel;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config [{section}] {key}: {reason}")]
    Field { section: &'static str, key: String, reason: String },
    #[error("config has unknown section [{0}]")]
    UnknownSection(String),
}

fn field(section: &'static str, key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field { section, key: key.to_string(), reason: reason.into() }
}

/// Parameter sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    /// Raman phases in units of π.
    pub phases_pi: Vec<f64>,
    /// Target `cos α` values.
    pub amplitudes: Vec<f64>,
    /// Offset the Raman phase so the averaged coherence phase matches each
    /// requested phase.
    pub calibrate_phase: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub sequences_per_setting: u64,
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Time-grid points of the pulse trajectory.
    pub points: usize,
    pub resamples: usize,
    pub bins: usize,
    pub min_bin_events: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSection {
    pub mirrors: MirrorBudget,
    pub numerical_aperture: f64,
    /// Seconds per experimental sequence.
    pub sequence_duration: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub system: SystemParams,
    pub noise: NoiseModel,
    pub sweep: SweepConfig,
    pub run: RunSection,
    pub budget: BudgetSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemParams::nominal(),
            noise: NoiseModel::laboratory(),
            sweep: SweepConfig {
                phases_pi: (0..8).map(|k| 0.25 * k as f64).collect(),
                amplitudes: vec![0.5f64.sqrt(), (1.0f64 / 3.0).sqrt(), (1.0f64 / 8.0).sqrt()],
                calibrate_phase: true,
            },
            run: RunSection {
                sequences_per_setting: 40_000,
                seed: None,
                out: PathBuf::from("out"),
                points: 2001,
                resamples: 200,
                bins: 5,
                min_bin_events: 500,
            },
            budget: BudgetSection { mirrors: MirrorBudget::NOMINAL, numerical_aperture: 0.5, sequence_duration: 1.5e-3 },
        }
    }
}

/// Key-value pairs of one section, consumed as they are read so leftovers
/// can be reported.
struct Section {
    name: &'static str,
    entries: BTreeMap<String, String>,
}

impl Section {
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw.trim().parse().map(Some).map_err(|e| field(self.name, key, format!("cannot parse {raw:?}: {e}"))),
        }
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.take(key)?;
        match v {
            Some(x) if !x.is_finite() => Err(field(self.name, key, format!("must be finite, got {x}"))),
            other => Ok(other),
        }
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(raw) = self.entries.remove(key) else { return Ok(None) };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| field(self.name, key, format!("cannot parse list entry {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_keys().next() {
            Some(key) => Err(field(self.name, &key, "unknown key")),
            None => Ok(()),
        }
    }
}

const SECTIONS: [&str; 5] = ["system", "noise", "run", "sweep", "budget"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax { line: e.line, msg: e.msg.to_string() })?;
        let mut sections: BTreeMap<&'static str, Section> =
            SECTIONS.iter().map(|&name| (name, Section { name, entries: BTreeMap::new() })).collect();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(ConfigError::UnknownSection(format!("(none), key {key}")));
                }
                continue;
            };
            let section = sections.get_mut(name).ok_or_else(|| ConfigError::UnknownSection(name.to_string()))?;
            for (k, v) in props.iter() {
                section.entries.insert(k.to_string(), v.to_string());
            }
        }
        let mut take = |name: &str| sections.remove(name).expect("known section");
        let mut cfg = RunConfig::default();
        cfg.system = parse_system(take("system"))?;
        cfg.noise = parse_noise(take("noise"))?;
        parse_run(take("run"), &mut cfg.run)?;
        parse_sweep(take("sweep"), &mut cfg.sweep)?;
        parse_budget(take("budget"), &mut cfg.budget)?;
        Ok(cfg)
    }

    /// Fully resolved configuration in canonical form. Parsing it back
    /// yields the same run; its hash identifies the run in manifests.
    pub fn to_canonical(&self) -> String {
        let s = &self.system;
        let n = &self.noise;
        let r = &self.run;
        let mut out = String::new();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(out, "[system]");
        for (k, v) in [
            ("g_mhz", s.g / MHZ),
            ("kappa_mhz", s.kappa / MHZ),
            ("gamma_mhz", s.gamma / MHZ),
            ("rabi1_mhz", s.rabi1 / MHZ),
            ("rabi2_mhz", s.rabi2 / MHZ),
            ("delta1_mhz", s.delta1 / MHZ),
            ("delta2_mhz", s.delta2 / MHZ),
            ("cavity_detuning_mhz", s.cavity_detuning / MHZ),
            ("zeeman_mhz", s.zeeman_splitting / MHZ),
            ("cg1", s.cg1),
            ("cg2", s.cg2),
            ("raman_phase_pi", s.raman_phase / PI),
            ("pulse_us", s.pulse_duration / US),
            ("scatter_return", s.scatter_return),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "\n[noise]");
        for (k, v) in [
            ("exit_efficiency", n.exit_efficiency),
            ("apd_efficiency0", n.apd_efficiency0),
            ("apd_efficiency1", n.apd_efficiency1),
            ("dark_rate_hz", n.dark_rate),
            ("window_us", n.detection_window / US),
            ("readout_error", n.readout_error),
            ("path_imbalance", n.path_imbalance),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "\n[run]");
        let _ = writeln!(out, "sequences_per_setting = {}", r.sequences_per_setting);
        if let Some(seed) = r.seed {
            let _ = writeln!(out, "seed = {seed}");
        }
        let _ = writeln!(out, "points = {}", r.points);
        let _ = writeln!(out, "resamples = {}", r.resamples);
        let _ = writeln!(out, "bins = {}", r.bins);
        let _ = writeln!(out, "min_bin_events = {}", r.min_bin_events);
        let _ = writeln!(out, "\n[sweep]");
        let _ = writeln!(out, "phases_pi = {}", list(&self.sweep.phases_pi));
        let _ = writeln!(out, "amplitudes = {}", list(&self.sweep.amplitudes));
        let _ = writeln!(out, "calibrate_phase = {}", self.sweep.calibrate_phase);
        let b = &self.budget;
        let _ = writeln!(out, "\n[budget]");
        for (k, v) in [
            ("t1_ppm", b.mirrors.t1),
            ("t2_ppm", b.mirrors.t2),
            ("losses_ppm", b.mirrors.losses),
            ("numerical_aperture", b.numerical_aperture),
            ("sequence_us", b.sequence_duration / US),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn parse_system(mut sec: Section) -> Result<SystemParams, ConfigError> {
    let mut p = SystemParams::nominal();
    let mhz = [
        ("g_mhz", &mut p.g),
        ("kappa_mhz", &mut p.kappa),
        ("gamma_mhz", &mut p.gamma),
        ("cavity_detuning_mhz", &mut p.cavity_detuning),
        ("zeeman_mhz", &mut p.zeeman_splitting),
    ];
    for (key, slot) in mhz {
        if let Some(v) = sec.number(key)? {
            *slot = v * MHZ;
        }
    }
    for (key, slot) in [("cg1", &mut p.cg1), ("cg2", &mut p.cg2), ("scatter_return", &mut p.scatter_return)] {
        if let Some(v) = sec.number(key)? {
            *slot = v;
        }
    }
    if let Some(v) = sec.number("pulse_us")? {
        p.pulse_duration = v * US;
    }
    if let Some(v) = sec.number("raman_phase_pi")? {
        p.raman_phase = v * PI;
    }
    if !(0.0..=1.0).contains(&p.scatter_return) {
        return Err(field("system", "scatter_return", format!("must lie in [0, 1], got {}", p.scatter_return)));
    }
    if p.cavity_detuning == 0.0 {
        return Err(field("system", "cavity_detuning_mhz", "must be non-zero"));
    }

    let rabi = (sec.number("rabi1_mhz")?, sec.number("rabi2_mhz")?);
    let mixing = sec.number("mixing_angle_pi")?;
    p = match rabi {
        (Some(r1), Some(r2)) => {
            if mixing.is_some() {
                return Err(field("system", "mixing_angle_pi", "conflicts with explicit rabi1_mhz and rabi2_mhz"));
            }
            SystemParams { rabi1: r1 * MHZ, rabi2: r2 * MHZ, ..p }.tuned_to_resonance()
        }
        (None, None) => p.tuned_to_resonance().with_mixing_angle(mixing.unwrap_or(0.25) * PI),
        (Some(_), None) => return Err(field("system", "rabi2_mhz", "required when rabi1_mhz is set")),
        (None, Some(_)) => return Err(field("system", "rabi1_mhz", "required when rabi2_mhz is set")),
    };
    match (sec.number("delta1_mhz")?, sec.number("delta2_mhz")?) {
        (Some(d1), Some(d2)) => {
            p.delta1 = d1 * MHZ;
            p.delta2 = d2 * MHZ;
        }
        (None, None) => {}
        (Some(_), None) => return Err(field("system", "delta2_mhz", "required when delta1_mhz is set")),
        (None, Some(_)) => return Err(field("system", "delta1_mhz", "required when delta2_mhz is set")),
    }
    if p.delta1 == 0.0 || p.delta2 == 0.0 {
        return Err(field("system", "delta1_mhz", "tone detunings must be non-zero"));
    }
    if let Some(khz) = sec.number("raman_mismatch_khz")? {
        p = p.with_raman_mismatch(2.0 * PI * khz * 1e3);
    }
    sec.finish()?;
    Ok(p)
}

fn parse_noise(mut sec: Section) -> Result<NoiseModel, ConfigError> {
    let preset: Option<String> = sec.take("preset")?;
    let mut n = match preset.as_deref() {
        None | Some("lab") => NoiseModel::laboratory(),
        Some("ideal") => NoiseModel::ideal(),
        Some(other) => return Err(field("noise", "preset", format!("expected \"lab\" or \"ideal\", got {other:?}"))),
    };
    if let Some(v) = sec.number("apd_efficiency")? {
        n.apd_efficiency0 = v;
        n.apd_efficiency1 = v;
    }
    for (key, slot) in [
        ("exit_efficiency", &mut n.exit_efficiency),
        ("apd_efficiency0", &mut n.apd_efficiency0),
        ("apd_efficiency1", &mut n.apd_efficiency1),
        ("dark_rate_hz", &mut n.dark_rate),
        ("readout_error", &mut n.readout_error),
        ("path_imbalance", &mut n.path_imbalance),
    ] {
        if let Some(v) = sec.number(key)? {
            *slot = v;
        }
    }
    if let Some(v) = sec.number("window_us")? {
        n.detection_window = v * US;
    }
    sec.finish()?;
    n.validate().map_err(|e| match e {
        ionphoton::measurement::MeasurementError::InvalidNoise { name, reason } => field("noise", name, reason),
        other => field("noise", "(model)", other.to_string()),
    })?;
    Ok(n)
}

fn parse_run(mut sec: Section, run: &mut RunSection) -> Result<(), ConfigError> {
    if let Some(v) = sec.take("sequences_per_setting")? {
        run.sequences_per_setting = v;
    }
    run.seed = sec.take("seed")?;
    if let Some(v) = sec.take::<String>("out")? {
        run.out = PathBuf::from(v.trim());
    }
    if let Some(v) = sec.take("points")? {
        run.points = v;
    }
    if run.points < 2 {
        return Err(field("run", "points", "need at least 2 grid points"));
    }
    if let Some(v) = sec.take("resamples")? {
        run.resamples = v;
    }
    if let Some(v) = sec.take("bins")? {
        run.bins = v;
    }
    if let Some(v) = sec.take("min_bin_events")? {
        run.min_bin_events = v;
    }
    sec.finish()
}

fn parse_sweep(mut sec: Section, sweep: &mut SweepConfig) -> Result<(), ConfigError> {
    if let Some(v) = sec.list("phases_pi")? {
        sweep.phases_pi = v;
    }
    if let Some(v) = sec.list("amplitudes")? {
        if let Some(bad) = v.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(field("sweep", "amplitudes", format!("cos α must lie in [0, 1], got {bad}")));
        }
        sweep.amplitudes = v;
    }
    if let Some(v) = sec.take("calibrate_phase")? {
        sweep.calibrate_phase = v;
    }
    sec.finish()
}

fn parse_budget(mut sec: Section, budget: &mut BudgetSection) -> Result<(), ConfigError> {
    for (key, slot) in [
        ("t1_ppm", &mut budget.mirrors.t1),
        ("t2_ppm", &mut budget.mirrors.t2),
        ("losses_ppm", &mut budget.mirrors.losses),
        ("numerical_aperture", &mut budget.numerical_aperture),
    ] {
        if let Some(v) = sec.number(key)? {
            *slot = v;
        }
    }
    if let Some(v) = sec.number("sequence_us")? {
        if v <= 0.0 {
            return Err(field("budget", "sequence_us", format!("must be positive, got {v}")));
        }
        budget.sequence_duration = v * US;
    }
    sec.finish()
}
