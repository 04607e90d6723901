//! Closed-form photon efficiency budget.

use std::fmt;

use thiserror::Error;

use crate::measurement::NoiseModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("mirror budget must have non-negative entries with a positive sum")]
    EmptyMirrorBudget,
    #[error("numerical aperture must lie in [0, 1], got {0}")]
    ApertureOutOfRange(f64),
}

/// Cavity mirror transmissions and round-trip losses, in ppm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MirrorBudget {
    /// Output-mirror transmission.
    pub t1: f64,
    pub t2: f64,
    /// Combined scattering and absorption losses.
    pub losses: f64,
}

impl MirrorBudget {
    pub const fn new(t1: f64, t2: f64, losses: f64) -> Self {
        Self { t1, t2, losses }
    }

    /// 13 ppm, 1.3 ppm, 68 ppm.
    pub const NOMINAL: MirrorBudget = MirrorBudget::new(13.0, 1.3, 68.0);
}

/// Probability that an intracavity photon leaves through the output
/// mirror, `T₁/(T₁ + T₂ + L)`.
pub fn output_coupling(m: MirrorBudget) -> Result<f64, BudgetError> {
    let total = m.t1 + m.t2 + m.losses;
    if m.t1 < 0.0 || m.t2 < 0.0 || m.losses < 0.0 || !(total > 0.0) {
        return Err(BudgetError::EmptyMirrorBudget);
    }
    Ok(m.t1 / total)
}

/// Fraction of isotropic emission collected by a lens of numerical
/// aperture `na`, `(1 − √(1 − NA²))/2`.
pub fn free_space_collection(na: f64) -> Result<f64, BudgetError> {
    if !(0.0..=1.0).contains(&na) {
        return Err(BudgetError::ApertureOutOfRange(na));
    }
    Ok((1.0 - (1.0 - na * na).sqrt()) / 2.0)
}

/// Per-sequence detection probability and detected-event rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionBudget {
    pub generation: f64,
    pub exit_efficiency: f64,
    pub detector_efficiency: f64,
    pub probability: f64,
    /// Detected events per second.
    pub rate: f64,
}

/// `generation × exit × mean APD efficiency`, capped at 1, and the rate
/// at one sequence per `sequence_duration` seconds.
pub fn detection_budget(generation: f64, noise: &NoiseModel, sequence_duration: f64) -> DetectionBudget {
    let detector_efficiency = noise.mean_apd_efficiency();
    let probability = (generation * noise.exit_efficiency * detector_efficiency).clamp(0.0, 1.0);
    let rate = if sequence_duration > 0.0 { probability / sequence_duration } else { 0.0 };
    DetectionBudget { generation, exit_efficiency: noise.exit_efficiency, detector_efficiency, probability, rate }
}

impl fmt::Display for DetectionBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28}{:>10.4}", "generation probability", self.generation)?;
        writeln!(f, "{:<28}{:>10.4}", "cavity exit efficiency", self.exit_efficiency)?;
        writeln!(f, "{:<28}{:>10.4}", "mean detector efficiency", self.detector_efficiency)?;
        writeln!(f, "{:<28}{:>10.4}", "detection per sequence", self.probability)?;
        writeln!(f, "{:<28}{:>10.2}", "detected events per second", self.rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn output_coupling_values() {
        assert!((output_coupling(MirrorBudget::NOMINAL).unwrap() - 13.0 / 82.3).abs() < 1e-15);
        assert!((output_coupling(MirrorBudget::new(13.0, 1.3, 4.0)).unwrap() - 13.0 / 18.3).abs() < 1e-15);
        assert!(output_coupling(MirrorBudget::new(0.0, 0.0, 0.0)).is_err());
        assert!(output_coupling(MirrorBudget::new(-1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn free_space_values() {
        assert_eq!(free_space_collection(1.0).unwrap(), 0.5);
        assert_eq!(free_space_collection(0.0).unwrap(), 0.0);
        assert!((free_space_collection(0.5).unwrap() - (1.0 - 0.75f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!(free_space_collection(1.2).is_err());
        assert!(free_space_collection(-0.1).is_err());
    }

    #[test]
    fn detection_budget_values() {
        let b = detection_budget(0.9, &NoiseModel::laboratory(), 1.5e-3);
        assert!((b.probability - 0.0576).abs() < 1e-12);
        let zero = detection_budget(0.9, &NoiseModel { exit_efficiency: 0.0, ..NoiseModel::laboratory() }, 1.5e-3);
        assert_eq!((zero.probability, zero.rate), (0.0, 0.0));
        let rate = detection_budget(0.057 / (0.16 * 0.4), &NoiseModel::laboratory(), 1.5e-3).rate;
        assert!((rate - 38.0).abs() < 1e-9);
    }

    #[test]
    fn per_port_efficiencies_average() {
        let n = NoiseModel { apd_efficiency0: 0.3, apd_efficiency1: 0.5, ..NoiseModel::laboratory() };
        let b = detection_budget(1.0, &n, 1.0);
        assert!((b.detector_efficiency - 0.4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn output_coupling_monotone(t1 in 0.1f64..1e3, t2 in 0.0f64..1e3, l in 0.0f64..1e3, d in 0.1f64..100.0) {
            let base = output_coupling(MirrorBudget::new(t1, t2, l)).unwrap();
            prop_assert!(output_coupling(MirrorBudget::new(t1 + d, t2, l)).unwrap() > base);
            prop_assert!(output_coupling(MirrorBudget::new(t1, t2 + d, l)).unwrap() < base);
            prop_assert!(output_coupling(MirrorBudget::new(t1, t2, l + d)).unwrap() < base);
        }

        #[test]
        fn detection_budget_multiplicative(g in 0.0f64..0.5, exit in 0.0f64..0.5, apd in 0.0f64..0.5) {
            let n = NoiseModel { exit_efficiency: exit, apd_efficiency0: apd, apd_efficiency1: apd, ..NoiseModel::laboratory() };
            let base = detection_budget(g, &n, 1e-3).probability;
            let tol = 1e-12;
            prop_assert!((detection_budget(2.0 * g, &n, 1e-3).probability - 2.0 * base).abs() < tol);
            let n2 = NoiseModel { exit_efficiency: 2.0 * exit, ..n.clone() };
            prop_assert!((detection_budget(g, &n2, 1e-3).probability - 2.0 * base).abs() < tol);
            let n3 = NoiseModel { apd_efficiency0: 2.0 * apd, apd_efficiency1: 2.0 * apd, ..n.clone() };
            prop_assert!((detection_budget(g, &n3, 1e-3).probability - 2.0 * base).abs() < tol);
        }
    }
}
