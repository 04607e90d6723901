//! Detection-event Monte Carlo: polarization analysis, detector
//! imperfections, ion readout and count aggregation.

mod counts;
mod monte_carlo;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand::Rng;
use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::linalg::{partial_trace, pauli_projector, tensor, Axis, Operator, Subsystem, ONE, ZERO};

pub use counts::{CountTable, Outcome, SettingCounts};
pub use monte_carlo::{counts_in_window, parse_event_log, run_experiment, simulate_sequence, DetectionEvent, Experiment, PhotonSource};

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("setting {0} has no swapped partner")]
    MissingSwapPartner(BasisSetting),
    #[error("invalid noise parameter {name}: {reason}")]
    InvalidNoise { name: &'static str, reason: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Photon polarization basis selected by the analyzer waveplates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhotonBasis {
    HV,
    DA,
    RL,
}

impl PhotonBasis {
    pub const ALL: [PhotonBasis; 3] = [PhotonBasis::HV, PhotonBasis::DA, PhotonBasis::RL];

    pub fn label(self) -> &'static str {
        match self {
            PhotonBasis::HV => "HV",
            PhotonBasis::DA => "DA",
            PhotonBasis::RL => "RL",
        }
    }

    /// Quarter- and half-waveplate fast-axis angles (radians) that send the
    /// first state of the pair to beamsplitter port 0.
    pub fn waveplate_angles(self) -> (f64, f64) {
        use std::f64::consts::PI;
        match self {
            PhotonBasis::HV => (0.0, 0.0),
            PhotonBasis::DA => (PI / 4.0, PI / 8.0),
            PhotonBasis::RL => (PI / 4.0, PI / 4.0),
        }
    }
}

impl FromStr for PhotonBasis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "HV" => Ok(PhotonBasis::HV),
            "DA" => Ok(PhotonBasis::DA),
            "RL" => Ok(PhotonBasis::RL),
            other => Err(format!("unknown photon basis '{other}'")),
        }
    }
}

/// One of the 18 analyzer configurations: photon basis, ion Pauli axis and
/// whether the half-waveplate is rotated to exchange the two output ports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisSetting {
    pub ion_axis: Axis,
    pub photon_basis: PhotonBasis,
    pub swapped: bool,
}

impl BasisSetting {
    pub fn new(ion_axis: Axis, photon_basis: PhotonBasis, swapped: bool) -> Self {
        Self { ion_axis, photon_basis, swapped }
    }

    /// The nine settings with the ports in their nominal assignment.
    pub fn unswapped() -> Vec<BasisSetting> {
        let mut out = Vec::with_capacity(9);
        for axis in Axis::ALL {
            for basis in PhotonBasis::ALL {
                out.push(BasisSetting::new(axis, basis, false));
            }
        }
        out
    }

    /// All 18 settings, each unswapped setting followed by its partner.
    pub fn all() -> Vec<BasisSetting> {
        Self::unswapped().into_iter().flat_map(|s| [s, s.partner()]).collect()
    }

    pub fn partner(self) -> BasisSetting {
        BasisSetting { swapped: !self.swapped, ..self }
    }

    /// `x/HV`-style identifier, without the swap flag.
    pub fn id(self) -> String {
        format!("{}/{}", self.ion_axis.label(), self.photon_basis.label())
    }

    pub fn parse_id(id: &str, swapped: bool) -> Result<BasisSetting, String> {
        let (axis, basis) = id.split_once('/').ok_or_else(|| format!("malformed setting id '{id}'"))?;
        Ok(BasisSetting::new(axis.parse()?, basis.parse()?, swapped))
    }
}

impl fmt::Display for BasisSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.id(), if self.swapped { " (swapped)" } else { "" })
    }
}

/// Detector and readout imperfections.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    /// Probability that an intracavity photon leaves through the output mirror.
    pub exit_efficiency: f64,
    pub apd_efficiency0: f64,
    pub apd_efficiency1: f64,
    /// Combined dark-count rate of both detectors (1/s).
    pub dark_rate: f64,
    /// Interval after the start of the Raman pulse in which clicks are
    /// accepted (s).
    pub detection_window: f64,
    /// Probability that an ion readout outcome is flipped.
    pub readout_error: f64,
    /// Ratio of path-1 to path-0 transmission through the analyzer.
    pub path_imbalance: f64,
}

impl NoiseModel {
    /// Perfect optics and detectors: every generated photon is detected.
    pub fn ideal() -> Self {
        Self {
            exit_efficiency: 1.0,
            apd_efficiency0: 1.0,
            apd_efficiency1: 1.0,
            dark_rate: 0.0,
            detection_window: 40e-6,
            readout_error: 0.0,
            path_imbalance: 1.0,
        }
    }

    /// 16 % exit, 40 % detectors, 36 Hz combined dark counts over the 40 μs
    /// Raman window.
    pub fn laboratory() -> Self {
        Self {
            exit_efficiency: 0.16,
            apd_efficiency0: 0.40,
            apd_efficiency1: 0.40,
            dark_rate: 36.0,
            detection_window: 40e-6,
            readout_error: 0.0,
            path_imbalance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        let probabilities = [
            ("exit_efficiency", self.exit_efficiency),
            ("apd_efficiency0", self.apd_efficiency0),
            ("apd_efficiency1", self.apd_efficiency1),
            ("readout_error", self.readout_error),
        ];
        for (name, v) in probabilities {
            if !(0.0..=1.0).contains(&v) {
                return Err(MeasurementError::InvalidNoise { name, reason: format!("must lie in [0, 1], got {v}") });
            }
        }
        for (name, v) in [("dark_rate", self.dark_rate), ("detection_window", self.detection_window)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MeasurementError::InvalidNoise { name, reason: format!("must be non-negative, got {v}") });
            }
        }
        if !(self.path_imbalance.is_finite() && self.path_imbalance > 0.0) {
            return Err(MeasurementError::InvalidNoise {
                name: "path_imbalance",
                reason: format!("must be positive, got {}", self.path_imbalance),
            });
        }
        Ok(())
    }

    /// Probability that a photon reaching port `k` produces a click,
    /// excluding the cavity exit. The weaker path is scaled down by the
    /// imbalance ratio.
    pub fn port_efficiency(&self, port: usize) -> f64 {
        let (t0, t1) = if self.path_imbalance <= 1.0 { (1.0, self.path_imbalance) } else { (1.0 / self.path_imbalance, 1.0) };
        match port {
            0 => self.apd_efficiency0 * t0,
            _ => self.apd_efficiency1 * t1,
        }
    }

    pub fn mean_apd_efficiency(&self) -> f64 {
        0.5 * (self.apd_efficiency0 + self.apd_efficiency1)
    }
}

/// Ion readout result. `D` is the +1 eigenstate of the chosen Pauli axis
/// (for `z`, the `|D⟩` level itself); `S` is the −1 eigenstate, which the
/// mapping pulses transfer to `|S⟩` before fluorescence detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IonOutcome {
    D,
    S,
}

impl IonOutcome {
    pub fn label(self) -> &'static str {
        match self {
            IonOutcome::D => "D",
            IonOutcome::S => "S",
        }
    }

    pub fn is_positive(self) -> bool {
        self == IonOutcome::D
    }

    fn flipped(self) -> Self {
        match self {
            IonOutcome::D => IonOutcome::S,
            IonOutcome::S => IonOutcome::D,
        }
    }
}

impl FromStr for IonOutcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "D" => Ok(IonOutcome::D),
            "S" => Ok(IonOutcome::S),
            other => Err(format!("unknown ion outcome '{other}'")),
        }
    }
}

fn rotation(theta: f64) -> Operator {
    let (s, c) = theta.sin_cos();
    Operator::from_real(2, &[c, -s, s, c])
}

/// Quarter-waveplate with fast axis at `theta` from horizontal.
pub fn quarter_waveplate(theta: f64) -> Operator {
    let retarder = Operator::from_row_major(vec![ONE, ZERO, ZERO, C64::new(0.0, 1.0)]);
    &(&rotation(theta) * &retarder) * &rotation(-theta)
}

/// Half-waveplate with fast axis at `theta` from horizontal.
pub fn half_waveplate(theta: f64) -> Operator {
    let (s, c) = (2.0 * theta).sin_cos();
    Operator::from_real(2, &[c, s, s, -c])
}

/// Jones matrix of the waveplates in front of the polarizing beamsplitter;
/// port 0 transmits `H` after the waveplates, port 1 reflects `V`.
///
/// * `HV`: port 0 ← `H`
/// * `DA`: port 0 ← `D = (H + V)/√2`
/// * `RL`: port 0 ← `R = (H − iV)/√2`
///
/// The swapped partner rotates the half-waveplate by a further 45°, which
/// exchanges the ports.
pub fn analyzer_unitary(setting: BasisSetting) -> Operator {
    let (q, h) = setting.photon_basis.waveplate_angles();
    let h = if setting.swapped { h + std::f64::consts::FRAC_PI_4 } else { h };
    &half_waveplate(h) * &quarter_waveplate(q)
}

/// Projector onto the polarization that the analyzer sends to `port`.
pub fn port_projector(setting: BasisSetting, port: usize) -> Operator {
    let u = analyzer_unitary(setting);
    let mut p = Operator::zeros(2);
    p[(port, port)] = ONE;
    &(&u.dagger() * &p) * &u
}

/// Samples an ion measurement along `axis` on the ion half of a 4-dim
/// ion ⊗ photon state (or a 2-dim ion state), flipping the result with
/// probability `error`.
pub fn ion_readout<R: Rng + ?Sized>(state: &Operator, axis: Axis, error: f64, rng: &mut R) -> IonOutcome {
    let ion = match state.dim() {
        2 => state.clone(),
        4 => partial_trace(state, (2, 2), Subsystem::A).expect("4 = 2 × 2"),
        d => panic!("ion readout expects a 2- or 4-dim state, got {d}"),
    };
    let total = ion.trace().re;
    let p_d = (ion.expectation(&pauli_projector(axis, true)) / total).clamp(0.0, 1.0);
    let outcome = if rng.random::<f64>() < p_d { IonOutcome::D } else { IonOutcome::S };
    if error > 0.0 && rng.random::<f64>() < error {
        outcome.flipped()
    } else {
        outcome
    }
}

/// Ion state conditioned on the photon arriving at `port`, with the
/// probability of that port.
fn condition_on_port(joint: &Operator, setting: BasisSetting, port: usize) -> (Operator, f64) {
    let proj = tensor(&Operator::identity(2), &port_projector(setting, port));
    let projected = &(&proj * joint) * &proj;
    let ion = partial_trace(&projected, (2, 2), Subsystem::A).expect("4 = 2 × 2");
    let p = ion.trace().re.max(0.0);
    (ion, p)
}
