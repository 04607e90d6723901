//! Seeded, parallel sequence simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use super::{condition_on_port, ion_readout, BasisSetting, CountTable, IonOutcome, MeasurementError, NoiseModel, Outcome};
use crate::dynamics::{conditional_joint_state, joint, emission_pulse, simulate_rotating, PulseShape, SystemParams, Trajectory, US};
use crate::linalg::Operator;

/// Photon emission statistics of one parameter set, computed once and
/// shared by all sequences.
#[derive(Clone, Debug)]
pub struct PhotonSource {
    pub params: SystemParams,
    pub trajectory: Trajectory,
    pub pulse: PulseShape,
    /// Cumulative emission probability on the trajectory grid.
    cumulative: Vec<f64>,
    ion_marginal: Operator,
}

impl PhotonSource {
    pub fn new(params: &SystemParams, points: usize) -> Result<Self, MeasurementError> {
        let trajectory = simulate_rotating(params, points)?;
        let pulse = emission_pulse(&trajectory, params);
        let mut cumulative = Vec::with_capacity(pulse.times.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 1..pulse.times.len() {
            let dt = pulse.times[k] - pulse.times[k - 1];
            acc += 0.5 * dt * (pulse.h[k - 1] + pulse.v[k - 1] + pulse.h[k] + pulse.v[k]);
            cumulative.push(acc);
        }
        let ion_marginal = trajectory.ion_marginal_final();
        Ok(Self { params: params.clone(), trajectory, pulse, cumulative, ion_marginal })
    }

    /// Probability that a photon leaves the cavity mode during the pulse.
    pub fn generation_probability(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Emission time for a uniform draw `u` in `[0, 1)`, by inverting the
    /// piecewise-linear cumulative distribution.
    pub fn emission_time(&self, u: f64) -> f64 {
        let target = u * self.generation_probability();
        let k = self.cumulative.partition_point(|&c| c < target).clamp(1, self.cumulative.len() - 1);
        let (c0, c1) = (self.cumulative[k - 1], self.cumulative[k]);
        let (t0, t1) = (self.pulse.times[k - 1], self.pulse.times[k]);
        if c1 > c0 {
            t0 + (target - c0) / (c1 - c0) * (t1 - t0)
        } else {
            t1
        }
    }

    /// Joint ion-photon state given a photon detected at `t`.
    pub fn joint_state(&self, t: f64) -> Result<Operator, MeasurementError> {
        Ok(conditional_joint_state(&self.trajectory, t, &self.params)?)
    }

    /// Emission-weighted mean of the conditional joint state over detection
    /// times in `[0, window]`: the state that ideal time-integrated
    /// tomography reconstructs.
    pub fn average_joint_state(&self, window: f64) -> Result<Operator, MeasurementError> {
        let mut acc = Operator::zeros(4);
        let mut weight = 0.0;
        let times = &self.pulse.times;
        for k in 1..times.len() {
            if times[k] > window {
                break;
            }
            let dt = times[k] - times[k - 1];
            for j in [k - 1, k] {
                let w = 0.5 * dt * (self.pulse.h[j] + self.pulse.v[j]);
                if w > 0.0 {
                    acc += &self.joint_state(times[j])?.scale_re(w);
                    weight += w;
                }
            }
        }
        if weight <= 0.0 {
            return Err(MeasurementError::Dynamics(crate::dynamics::DynamicsError::ZeroEmission { t: window }));
        }
        Ok(acc.scale_re(1.0 / weight))
    }

    /// Source whose averaged coherence phase over `[0, window]` equals
    /// `phase`, found by offsetting the Raman phase.
    pub fn with_calibrated_phase(
        params: &SystemParams,
        phase: f64,
        window: f64,
        points: usize,
    ) -> Result<Self, MeasurementError> {
        let probe = Self::new(params, points)?;
        let measured = probe.average_joint_state(window)?[(joint::DPV, joint::DH)].arg();
        let mut tuned = params.clone();
        tuned.raman_phase += phase - measured;
        Self::new(&tuned, points)
    }

    /// Ion state after the pulse when nothing is known about the photon.
    pub fn ion_marginal(&self) -> &Operator {
        &self.ion_marginal
    }
}

/// A sequence that produced a click.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionEvent {
    pub sequence_index: u64,
    pub setting: BasisSetting,
    /// Seconds after the start of the Raman pulse.
    pub detection_time: f64,
    pub detector: usize,
    pub dark: bool,
    pub ion_outcome: IonOutcome,
}

impl DetectionEvent {
    pub fn outcome(&self) -> Outcome {
        Outcome::new(self.detector, self.ion_outcome)
    }
}

fn sequence_rng(seed: u64, sequence_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sequence_index);
    rng
}

/// Simulates one sequence; `None` when no detector clicks.
///
/// The random stream depends only on `(seed, sequence_index)`.
pub fn simulate_sequence(
    source: &PhotonSource,
    noise: &NoiseModel,
    setting: BasisSetting,
    sequence_index: u64,
    seed: u64,
) -> Option<DetectionEvent> {
    let mut rng = sequence_rng(seed, sequence_index);

    // Candidate clicks: (time, detector, conditioned ion state or None for dark).
    let mut photon: Option<(f64, usize, Operator)> = None;
    if rng.random::<f64>() < source.generation_probability() * noise.exit_efficiency {
        let t = source.emission_time(rng.random());
        if t <= noise.detection_window {
            if let Ok(joint) = source.joint_state(t) {
                let (ion0, p0) = condition_on_port(&joint, setting, 0);
                let port = if rng.random::<f64>() < p0 { 0 } else { 1 };
                let ion = if port == 0 { ion0 } else { condition_on_port(&joint, setting, 1).0 };
                if rng.random::<f64>() < noise.port_efficiency(port) {
                    photon = Some((t, port, ion));
                }
            }
        }
    }

    let mut dark: Option<(f64, usize)> = None;
    if noise.dark_rate > 0.0 && noise.detection_window > 0.0 {
        let arrival = Exp::new(0.5 * noise.dark_rate).expect("positive rate");
        for detector in 0..2 {
            let t: f64 = arrival.sample(&mut rng);
            if t <= noise.detection_window && dark.is_none_or(|(best, _)| t < best) {
                dark = Some((t, detector));
            }
        }
    }

    let (time, detector, ion_state, is_dark) = match (photon, dark) {
        (Some((tp, port, ion)), Some((td, det))) => {
            if td < tp {
                (td, det, source.ion_marginal().clone(), true)
            } else {
                (tp, port, ion, false)
            }
        }
        (Some((tp, port, ion)), None) => (tp, port, ion, false),
        (None, Some((td, det))) => (td, det, source.ion_marginal().clone(), true),
        (None, None) => return None,
    };
    let ion_outcome = ion_readout(&ion_state, setting.ion_axis, noise.readout_error, &mut rng);
    Some(DetectionEvent { sequence_index, setting, detection_time: time, detector, dark: is_dark, ion_outcome })
}

/// Aggregated result of a multi-setting run.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub counts: CountTable,
    /// Detected events ordered by sequence index.
    pub events: Vec<DetectionEvent>,
}

const EVENT_HEADER: &str = "sequence_index,setting,swapped,detector,detection_time_us,dark,ion_outcome";

impl Experiment {
    /// Comma-separated event log with a header line.
    pub fn event_log(&self) -> String {
        let mut out = String::with_capacity(48 * (self.events.len() + 1));
        out.push_str(EVENT_HEADER);
        out.push('\n');
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{}\n",
                e.sequence_index,
                e.setting.id(),
                u8::from(e.setting.swapped),
                e.detector,
                e.detection_time / US,
                u8::from(e.dark),
                e.ion_outcome.label()
            ));
        }
        out
    }
}

/// Parses the log written by [`Experiment::event_log`].
pub fn parse_event_log(text: &str) -> Result<Vec<DetectionEvent>, MeasurementError> {
    let err = |line: usize, msg: String| MeasurementError::Parse { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, EVENT_HEADER)) => {}
        Some((n, other)) => return Err(err(n, format!("expected header '{EVENT_HEADER}', found '{other}'"))),
        None => return Err(err(1, "missing header".into())),
    }
    let flag = |n: usize, s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(err(n, format!("expected 0 or 1, found '{other}'"))),
    };
    let mut events = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(n, format!("expected 7 fields, found {}", f.len())));
        }
        let sequence_index = f[0].parse().map_err(|_| err(n, format!("invalid sequence index '{}'", f[0])))?;
        let setting = BasisSetting::parse_id(f[1], flag(n, f[2])?).map_err(|m| err(n, m))?;
        let detector = match f[3] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(n, format!("detector must be 0 or 1, found '{other}'"))),
        };
        let t_us: f64 = f[4].parse().map_err(|_| err(n, format!("invalid detection time '{}'", f[4])))?;
        let dark = flag(n, f[5])?;
        let ion_outcome = f[6].parse().map_err(|m| err(n, m))?;
        events.push(DetectionEvent { sequence_index, setting, detection_time: t_us * US, detector, dark, ion_outcome });
    }
    Ok(events)
}

/// Runs `sequences_per_setting` sequences of every listed setting.
///
/// Sequence `j` of the setting at position `i` has global index
/// `i · sequences_per_setting + j`, which alone seeds its random stream, so
/// the output does not depend on the number of worker threads.
pub fn run_experiment(
    source: &PhotonSource,
    noise: &NoiseModel,
    settings: &[BasisSetting],
    sequences_per_setting: u64,
    seed: u64,
) -> Result<Experiment, MeasurementError> {
    noise.validate()?;
    if let Some(s) = settings.iter().find(|s| !settings.contains(&s.partner())) {
        return Err(MeasurementError::MissingSwapPartner(*s));
    }
    if noise.detection_window > source.params.pulse_duration * (1.0 + 1e-12) {
        return Err(MeasurementError::InvalidNoise {
            name: "detection_window",
            reason: "must not exceed the Raman pulse duration".into(),
        });
    }
    let n = sequences_per_setting;
    if n == 0 {
        return Ok(Experiment { counts: CountTable::new(), events: Vec::new() });
    }
    let total = settings.len() as u64 * n;
    let results: Vec<Option<DetectionEvent>> = (0..total)
        .into_par_iter()
        .map(|idx| simulate_sequence(source, noise, settings[(idx / n) as usize], idx, seed))
        .collect();

    let mut counts = CountTable::with_settings(settings);
    let mut events = Vec::new();
    for (idx, r) in results.into_iter().enumerate() {
        match r {
            Some(e) => {
                counts.record(e.setting, e.outcome());
                events.push(e);
            }
            None => counts.record_none(settings[idx / n as usize]),
        }
    }
    Ok(Experiment { counts, events })
}

/// Count table of the events whose detection time lies in `[start, end)`.
pub fn counts_in_window(events: &[DetectionEvent], start: f64, end: f64) -> CountTable {
    let mut t = CountTable::new();
    for e in events.iter().filter(|e| e.detection_time >= start && e.detection_time < end) {
        t.record(e.setting, e.outcome());
    }
    t
}
