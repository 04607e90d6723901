//! Two-qubit state reconstruction from joint ion-photon counts.

use std::fmt;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::linalg::{pauli, pauli_projector, tensor, Axis, Operator};
use crate::measurement::{port_projector, BasisSetting, CountTable, IonOutcome, Outcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomographyError {
    #[error("settings do not determine the state; missing: {}", .missing.join(", "))]
    InsufficientCoverage { missing: Vec<String> },
    #[error("setting {0} has no detected events")]
    EmptySetting(BasisSetting),
    #[error("outcome {outcome} of {setting} has counts but zero probability")]
    UndefinedLikelihood { setting: BasisSetting, outcome: String },
}

/// Projector for `outcome` of `setting`: the ion Pauli eigenprojector
/// (`D` ↦ +1) tensored with the polarization sent to the outcome's port.
pub fn povm_element(setting: BasisSetting, outcome: Outcome) -> Operator {
    tensor(
        &pauli_projector(setting.ion_axis, outcome.ion == IonOutcome::D),
        &port_projector(setting, outcome.port),
    )
}

/// Flattened (POVM element, count, detected total of its setting) triples.
struct Design {
    elements: Vec<(BasisSetting, Outcome, Operator, f64)>,
    total: f64,
}

impl Design {
    fn new(counts: &CountTable) -> Self {
        let mut elements = Vec::new();
        let mut total = 0.0;
        for (setting, c) in counts.iter() {
            if c.detected() == 0 {
                continue;
            }
            total += c.detected() as f64;
            for outcome in Outcome::ALL {
                elements.push((setting, outcome, povm_element(setting, outcome), c.get(outcome) as f64));
            }
        }
        Self { elements, total }
    }
}

/// The 16 operators `σa ⊗ σb` with `σ0 = I`, in row-major `(a, b)` order.
fn pauli_basis() -> Vec<Operator> {
    let singles = [Operator::identity(2), pauli(Axis::X), pauli(Axis::Y), pauli(Axis::Z)];
    let mut out = Vec::with_capacity(16);
    for a in &singles {
        for b in &singles {
            out.push(tensor(a, b));
        }
    }
    out
}

/// Real 16-vector of Pauli coordinates `tr(Π σa⊗σb)`.
fn pauli_coordinates(op: &Operator, basis: &[Operator]) -> Vec<f64> {
    basis.iter().map(|b| op.trace_product(b).re).collect()
}

/// Symmetric real matrix as a Hermitian operator, so the Jacobi solver applies.
fn symmetric(n: usize, f: impl Fn(usize, usize) -> f64) -> Operator {
    Operator::from_fn(n, |i, j| C64::new(f(i, j), 0.0))
}

/// Unswapped setting ids with no detected events in either swap partner.
fn missing_settings(counts: &CountTable) -> Vec<String> {
    BasisSetting::unswapped()
        .into_iter()
        .filter(|s| {
            [*s, s.partner()].iter().all(|x| counts.get(*x).is_none_or(|c| c.detected() == 0))
        })
        .map(|s| s.id())
        .collect()
}

/// Rank of the measured POVM elements in the 16-dim operator space.
pub fn design_rank(counts: &CountTable) -> usize {
    let basis = pauli_basis();
    let rows: Vec<Vec<f64>> = Design::new(counts).elements.iter().map(|(_, _, p, _)| pauli_coordinates(p, &basis)).collect();
    rank(&rows, 16)
}

fn rank(rows: &[Vec<f64>], cols: usize) -> usize {
    let gram = symmetric(cols, |i, j| rows.iter().map(|r| r[i] * r[j]).sum());
    let values = gram.eigenvalues_hermitian();
    let top = values.iter().copied().fold(0.0, f64::max);
    values.iter().filter(|&&v| v > 1e-10 * top.max(f64::MIN_POSITIVE)).count()
}

fn check_coverage(counts: &CountTable) -> Result<(), TomographyError> {
    if design_rank(counts) < 16 {
        let missing = missing_settings(counts);
        let missing = if missing.is_empty() { vec!["(informationally incomplete setting set)".into()] } else { missing };
        return Err(TomographyError::InsufficientCoverage { missing });
    }
    Ok(())
}

/// Least-squares solution of `tr(ρΠ) = n/N_setting` over all measured
/// elements with `tr ρ = 1` fixed. Hermitian and unit trace; positivity is
/// not enforced.
pub fn linear_inversion(counts: &CountTable) -> Result<Operator, TomographyError> {
    if let Some((s, _)) = counts.iter().find(|(_, c)| c.detected() == 0) {
        return Err(TomographyError::EmptySetting(s));
    }
    check_coverage(counts)?;
    let basis = pauli_basis();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (setting, c) in counts.iter() {
        let n = c.detected() as f64;
        for outcome in Outcome::ALL {
            let coords = pauli_coordinates(&povm_element(setting, outcome), &basis);
            // ρ = (I + Σ r_ab σa⊗σb)/4, so tr(ρΠ) = (coords[0] + Σ r_ab coords[ab])/4
            rhs.push(c.get(outcome) as f64 / n - coords[0] / 4.0);
            rows.push(coords[1..].iter().map(|x| x / 4.0).collect::<Vec<f64>>());
        }
    }
    let m = 15;
    let normal = symmetric(m, |i, j| rows.iter().map(|r| r[i] * r[j]).sum());
    let projected: Vec<f64> = (0..m).map(|i| rows.iter().zip(&rhs).map(|(r, b)| r[i] * b).sum()).collect();
    let (values, vectors) = normal.eigh();
    let top = values.iter().copied().fold(0.0, f64::max);
    if values.iter().any(|&v| v <= 1e-10 * top) {
        return Err(TomographyError::InsufficientCoverage { missing: missing_settings(counts) });
    }
    let mut coeffs = vec![0.0; m];
    for (k, &lambda) in values.iter().enumerate() {
        let along: f64 = (0..m).map(|i| vectors[(i, k)].re * projected[i]).sum();
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c += vectors[(i, k)].re * along / lambda;
        }
    }
    let mut rho = basis[0].scale_re(0.25);
    for (b, c) in basis[1..].iter().zip(&coeffs) {
        rho += &b.scale_re(c / 4.0);
    }
    Ok(rho.hermitian_part())
}

fn loglikelihood_of(rho: &Operator, design: &Design) -> Result<f64, TomographyError> {
    let mut ll = 0.0;
    for (setting, outcome, pi, n) in &design.elements {
        if *n == 0.0 {
            continue;
        }
        let p = rho.expectation(pi);
        if p <= 0.0 {
            return Err(TomographyError::UndefinedLikelihood { setting: *setting, outcome: outcome.label() });
        }
        ll += n * p.ln();
    }
    Ok(ll)
}

/// `Σ n_k ln tr(ρΠ_k)` over detected events. Each setting's four outcome
/// probabilities already sum to one.
pub fn loglikelihood(rho: &Operator, counts: &CountTable) -> Result<f64, TomographyError> {
    loglikelihood_of(rho, &Design::new(counts))
}

/// Iteration controls for [`mle_reconstruct`].
#[derive(Clone, Copy, Debug)]
pub struct MleOptions {
    /// Stop once the log-likelihood changes by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Dilution `ε` of the update `(1−ε)I + εR`.
    pub dilution: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100_000, dilution: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct TomographyResult {
    pub rho_hat: Operator,
    pub iterations: usize,
    pub final_loglikelihood: f64,
    pub converged: bool,
    /// Log-likelihood after each accepted iteration, starting with the
    /// initial state.
    pub loglikelihood_trace: Vec<f64>,
}

impl TomographyResult {
    /// One-line record of the iteration outcome.
    pub fn summary(&self) -> String {
        format!(
            "{{\"iterations\": {}, \"loglikelihood\": {:.10e}, \"converged\": {}}}",
            self.iterations, self.final_loglikelihood, self.converged
        )
    }
}

impl fmt::Display for TomographyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary())
    }
}

/// Diluted `RρR` maximum-likelihood iteration from `I/4`.
///
/// A step that would lower the log-likelihood is retried with half the
/// dilution, so the recorded trace is non-decreasing.
pub fn mle_reconstruct(counts: &CountTable, opts: MleOptions) -> Result<TomographyResult, TomographyError> {
    check_coverage(counts)?;
    let design = Design::new(counts);
    let dim = 4;
    let identity = Operator::identity(dim);
    let mut rho = identity.scale_re(0.25);
    let mut ll = loglikelihood_of(&rho, &design)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let mut r = Operator::zeros(dim);
        for (_, _, pi, n) in &design.elements {
            if *n > 0.0 {
                r += &pi.scale_re(n / (design.total * rho.expectation(pi)));
            }
        }
        let mut eps = opts.dilution;
        let mut accepted = None;
        for _ in 0..40 {
            let m = &identity.scale_re(1.0 - eps) + &r.scale_re(eps);
            let next = (&(&m * &rho) * &m).hermitian_part();
            let next = next.scale_re(1.0 / next.trace().re);
            let next_ll = loglikelihood_of(&next, &design)?;
            if next_ll >= ll {
                accepted = Some((next, next_ll));
                break;
            }
            eps *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            converged = true;
            break;
        };
        let delta = (next_ll - ll).abs();
        rho = next;
        ll = next_ll;
        trace.push(ll);
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(TomographyResult { rho_hat: rho, iterations, final_loglikelihood: ll, converged, loglikelihood_trace: trace })
}

/// Counts equal to `total · tr(ρΠ)` for each listed setting, rounded to the
/// nearest integer.
pub fn expected_counts(rho: &Operator, settings: &[BasisSetting], total: u64) -> CountTable {
    let mut t = CountTable::with_settings(settings);
    for &s in settings {
        let c = t.entry(s);
        for outcome in Outcome::ALL {
            let p = rho.expectation(&povm_element(s, outcome)).max(0.0);
            c.joint[outcome.index()] = (p * total as f64).round() as u64;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::target_state;
    use crate::linalg::{check_density_matrix, trace_distance, Ket};
    use crate::measurement::{PhotonBasis, SettingCounts};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn bell() -> Operator {
        target_state(PI / 4.0, 0.0).projector()
    }

    fn random_state(seed: u64) -> Operator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let entries = (0..16).map(|_| C64::new(normal.sample(&mut rng), normal.sample(&mut rng))).collect();
        let g = Operator::from_row_major(entries);
        let rho = &g * &g.dagger();
        rho.scale_re(1.0 / rho.trace().re)
    }

    fn sample_counts(rho: &Operator, per_setting: u64, seed: u64) -> CountTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = CountTable::new();
        for s in BasisSetting::unswapped() {
            let probs: Vec<f64> = Outcome::ALL.iter().map(|&o| rho.expectation(&povm_element(s, o))).collect();
            let c = t.entry(s);
            for _ in 0..per_setting {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = 3;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                c.joint[k] += 1;
            }
        }
        t
    }

    #[test]
    fn povm_elements_are_complete_per_setting() {
        for s in BasisSetting::all() {
            let mut sum = Operator::zeros(4);
            for o in Outcome::ALL {
                sum += &povm_element(s, o);
            }
            assert!(sum.max_abs_diff(&Operator::identity(4)) < 1e-14);
        }
    }

    #[test]
    fn povm_spans_operator_space() {
        let basis = pauli_basis();
        let rows: Vec<Vec<f64>> = BasisSetting::unswapped()
            .into_iter()
            .flat_map(|s| Outcome::ALL.map(|o| pauli_coordinates(&povm_element(s, o), &basis)))
            .collect();
        assert_eq!(rows.len(), 36);
        assert_eq!(rank(&rows, 16), 16);
    }

    #[test]
    fn z_hv_d_port0_is_dh() {
        let s = BasisSetting::new(Axis::Z, PhotonBasis::HV, false);
        let expected = Ket::basis(4, 0).projector();
        assert!(povm_element(s, Outcome::new(0, IonOutcome::D)).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn linear_inversion_recovers_exact_bell_data() {
        let t = expected_counts(&bell(), &BasisSetting::all(), 4000);
        let rho = linear_inversion(&t).unwrap();
        assert!(rho.max_abs_diff(&bell()) < 1e-10);
    }

    #[test]
    fn linear_inversion_of_uniform_data_is_maximally_mixed() {
        let mut t = CountTable::new();
        for s in BasisSetting::all() {
            t.insert(s, SettingCounts { joint: [25; 4], none: 0 });
        }
        let rho = linear_inversion(&t).unwrap();
        assert!(rho.max_abs_diff(&Operator::identity(4).scale_re(0.25)) < 1e-12);
    }

    #[test]
    fn linear_inversion_of_sparse_pure_data_can_be_unphysical() {
        let mut found = false;
        for seed in 0..20 {
            let t = sample_counts(&bell(), 56, seed);
            let rho = linear_inversion(&t).unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-12);
            assert!(rho.hermitian_deviation() < 1e-12);
            if !check_density_matrix(&rho, 1e-9).is_ok() {
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn loglikelihood_properties() {
        let rho = random_state(4);
        let t = sample_counts(&rho, 200, 1);
        let base = loglikelihood(&rho, &t).unwrap();
        // adding to one setting's counts changes only its term, linearly
        let s = BasisSetting::new(Axis::Y, PhotonBasis::RL, false);
        let mut more = t.clone();
        let mut doubled = t.clone();
        for k in 0..4 {
            more.entry(s).joint[k] += 10;
            doubled.entry(s).joint[k] += 20;
        }
        let l1 = loglikelihood(&rho, &more).unwrap();
        let l2 = loglikelihood(&rho, &doubled).unwrap();
        assert!(((l2 - base) - 2.0 * (l1 - base)).abs() < 1e-9 * base.abs());

        // permuting settings (with their counts) leaves the sum unchanged
        let mut relabelled = CountTable::new();
        for (setting, c) in t.iter().collect::<Vec<_>>().into_iter().rev() {
            relabelled.insert(setting, *c);
        }
        assert!((loglikelihood(&rho, &relabelled).unwrap() - base).abs() < 1e-9 * base.abs());
    }

    #[test]
    fn zero_probability_with_counts_is_undefined() {
        let mut t = expected_counts(&bell(), &BasisSetting::unswapped(), 100);
        t.entry(BasisSetting::new(Axis::Z, PhotonBasis::HV, false)).joint[1] += 1;
        assert!(matches!(loglikelihood(&bell(), &t), Err(TomographyError::UndefinedLikelihood { .. })));
    }

    #[test]
    fn generator_maximizes_likelihood_on_exact_data() {
        let rho = random_state(11);
        let t = expected_counts(&rho, &BasisSetting::unswapped(), 1_000_000);
        let best = loglikelihood(&rho, &t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..100 {
            let w: f64 = rng.random_range(0.01..0.2);
            let other = random_state(1000 + k);
            let mixed = &rho.scale_re(1.0 - w) + &other.scale_re(w);
            assert!(loglikelihood(&mixed, &t).unwrap() <= best);
        }
    }

    #[test]
    fn mle_recovers_exact_bell_state() {
        let t = expected_counts(&bell(), &BasisSetting::all(), 4000);
        let res = mle_reconstruct(&t, MleOptions::default()).unwrap();
        let psi = target_state(PI / 4.0, 0.0);
        assert!(res.rho_hat.expectation(&psi.projector()) > 1.0 - 1e-6);
    }

    #[test]
    fn mle_is_monotone_and_physical() {
        let rho = random_state(21);
        let t = sample_counts(&rho, 2000, 2);
        let res = mle_reconstruct(&t, MleOptions::default()).unwrap();
        assert!(res.converged);
        for w in res.loglikelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(check_density_matrix(&res.rho_hat, 1e-8).is_ok());
        assert!(trace_distance(&res.rho_hat, &rho) < 0.05);
    }

    #[test]
    fn mle_agrees_with_physical_linear_inversion() {
        let rho = &random_state(31).scale_re(0.8) + &Operator::identity(4).scale_re(0.05);
        let t = sample_counts(&rho, 20_000, 3);
        let lin = linear_inversion(&t).unwrap();
        assert!(check_density_matrix(&lin, 1e-9).is_ok());
        let res = mle_reconstruct(&t, MleOptions::default()).unwrap();
        assert!((&res.rho_hat - &lin).frobenius_norm() < 0.02);
    }

    #[test]
    fn single_setting_is_rejected() {
        let s = BasisSetting::new(Axis::Z, PhotonBasis::HV, false);
        let mut t = CountTable::new();
        t.insert(s, SettingCounts { joint: [10, 0, 0, 10], none: 0 });
        match mle_reconstruct(&t, MleOptions::default()) {
            Err(TomographyError::InsufficientCoverage { missing }) => {
                assert_eq!(missing.len(), 8);
                assert!(!missing.contains(&"z/HV".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(linear_inversion(&t).is_err());
    }

    #[test]
    fn summary_line() {
        let t = expected_counts(&bell(), &BasisSetting::all(), 400);
        let res = mle_reconstruct(&t, MleOptions { max_iter: 3, ..Default::default() }).unwrap();
        assert_eq!(res.iterations, 3);
        assert!(!res.converged);
        assert!(res.summary().starts_with("{\"iterations\": 3, "));
    }
}
