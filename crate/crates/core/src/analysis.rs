//! Entanglement witnesses, phase fits, time-bin analysis and bootstrap
//! uncertainties.

use std::f64::consts::{PI, TAU};

use log::warn;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::joint;
use crate::linalg::{pauli, tensor, Axis, Ket, Operator};
use crate::measurement::{counts_in_window, CountTable, DetectionEvent, SettingCounts};
use crate::tomography::{mle_reconstruct, MleOptions, TomographyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coherence magnitude {0:.3e} is too small to define a phase")]
    VanishingCoherence(f64),
    #[error("sinusoid fit needs at least 2 distinct phases, got {0}")]
    InsufficientPhases(usize),
    #[error("time bin {bin} holds {events} events, fewer than the floor of {floor}")]
    UnderPopulatedBin { bin: usize, events: usize, floor: usize },
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("estimator failed on every bootstrap resample")]
    BootstrapFailed,
    #[error(transparent)]
    Tomography(#[from] TomographyError),
}

/// `⟨ψ|ρ|ψ⟩`
pub fn fidelity(rho: &Operator, psi: &Ket) -> Result<f64, AnalysisError> {
    if rho.dim() != psi.dim() {
        return Err(AnalysisError::DimensionMismatch { expected: rho.dim(), got: psi.dim() });
    }
    Ok(psi.inner(&rho.apply(psi)).re)
}

/// Wootters concurrence of a two-qubit state.
///
/// The `λᵢ` are the singular values of `√ρ (σy⊗σy) √ρ*`, taken in the
/// eigenbasis of `ρ` and read off the Hermitian dilation
/// `[[0, τ], [τ†, 0]]` so that pure states do not lose precision to square
/// roots of round-off.
pub fn concurrence(rho: &Operator) -> f64 {
    let yy = tensor(&pauli(Axis::Y), &pauli(Axis::Y));
    let (p, v) = rho.eigh();
    let n = rho.dim();
    let roots: Vec<f64> = p.iter().map(|x| x.max(0.0).sqrt()).collect();
    let column = |j: usize| Ket::new((0..n).map(|i| v[(i, j)]).collect());
    let flipped: Vec<Ket> = (0..n).map(|j| yy.apply(&Ket::new(column(j).amplitudes().iter().map(|z| z.conj()).collect()))).collect();
    let tau = Operator::from_fn(n, |i, j| column(i).inner(&flipped[j]) * (roots[i] * roots[j]));
    let dilation = Operator::from_fn(2 * n, |i, j| match (i < n, j < n) {
        (true, false) => tau[(i, j - n)],
        (false, true) => tau[(j, i - n)].conj(),
        _ => C64::new(0.0, 0.0),
    });
    let mut lambdas = dilation.eigenvalues_hermitian();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    (lambdas[0] - lambdas[1..n].iter().sum::<f64>()).max(0.0)
}

/// `⟨D′V|ρ|DH⟩`, equal to `cos α sin α e^{iφ}` for the target state.
pub fn coherence(rho: &Operator) -> C64 {
    rho[(joint::DPV, joint::DH)]
}

/// Phase of [`coherence`] in `(−π, π]`.
pub fn coherence_phase(rho: &Operator) -> Result<f64, AnalysisError> {
    let c = coherence(rho);
    if c.norm() < 1e-12 {
        return Err(AnalysisError::VanishingCoherence(c.norm()));
    }
    let phase = c.arg();
    Ok(if phase <= -PI { phase + TAU } else { phase })
}

/// Correlation matrix `T_ij = tr(ρ σi ⊗ σj)` (ion index first).
pub fn correlation_matrix(rho: &Operator) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for (i, a) in Axis::ALL.iter().enumerate() {
        for (j, b) in Axis::ALL.iter().enumerate() {
            t[i][j] = rho.expectation(&tensor(&pauli(*a), &pauli(*b)));
        }
    }
    t
}

/// Largest CHSH value over all measurement axes, `2√(s₁ + s₂)` with `s₁, s₂`
/// the two largest eigenvalues of `TᵀT`.
pub fn horodecki_bound(rho: &Operator) -> f64 {
    let t = correlation_matrix(rho);
    let tt = Operator::from_fn(3, |i, j| C64::new((0..3).map(|k| t[k][i] * t[k][j]).sum(), 0.0));
    let mut s = tt.eigenvalues_hermitian();
    s.sort_by(|a, b| b.total_cmp(a));
    2.0 * (s[0].max(0.0) + s[1].max(0.0)).sqrt()
}

fn mat_vec(t: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (0..3).map(|j| t[i][j] * v[j]).sum())
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(v: [f64; 3]) -> f64 {
    dot(v, v).sqrt()
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = norm(v);
    if n > 0.0 { v.map(|x| x / n) } else { [0.0, 0.0, 1.0] }
}

fn direction(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// `|E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)|` with `E(a,b) = aᵀ T b`.
pub fn chsh_value(rho: &Operator, a: [f64; 3], a2: [f64; 3], b: [f64; 3], b2: [f64; 3]) -> f64 {
    let t = correlation_matrix(rho);
    let e = |x: [f64; 3], y: [f64; 3]| dot(x, mat_vec(&t, y));
    (e(a, b) - e(a, b2) + e(a2, b) + e(a2, b2)).abs()
}

/// Optimized CHSH value with the axes that reach it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChshResult {
    pub value: f64,
    /// `[a, a′, b, b′]`: ion axes then photon axes.
    pub axes: [[f64; 3]; 4],
    pub horodecki_bound: f64,
}

/// For fixed photon axes the best ion axes are along `T(b − b′)` and
/// `T(b + b′)`, giving `|T(b − b′)| + |T(b + b′)|`.
fn best_for_photon_axes(t: &[[f64; 3]; 3], b: [f64; 3], b2: [f64; 3]) -> (f64, [f64; 3], [f64; 3]) {
    let diff = mat_vec(t, [b[0] - b2[0], b[1] - b2[1], b[2] - b2[2]]);
    let sum = mat_vec(t, [b[0] + b2[0], b[1] + b2[1], b[2] + b2[2]]);
    (norm(diff) + norm(sum), unit(diff), unit(sum))
}

/// Maximizes the CHSH value: a 15° grid over both photon axes, then a
/// Nelder-Mead refinement of their four angles. The ion axes follow in
/// closed form.
pub fn chsh_optimal(rho: &Operator) -> ChshResult {
    let t = correlation_matrix(rho);
    let step = 15f64.to_radians();
    let mut grid = Vec::new();
    for i in 0..=12 {
        for j in 0..24 {
            if (i == 0 || i == 12) && j > 0 {
                continue;
            }
            grid.push((i as f64 * step, j as f64 * step));
        }
    }
    let mut best = (f64::NEG_INFINITY, [0.0; 4]);
    for &(t1, p1) in &grid {
        for &(t2, p2) in &grid {
            let (v, _, _) = best_for_photon_axes(&t, direction(t1, p1), direction(t2, p2));
            if v > best.0 {
                best = (v, [t1, p1, t2, p2]);
            }
        }
    }
    let objective = |x: &[f64]| -best_for_photon_axes(&t, direction(x[0], x[1]), direction(x[2], x[3])).0;
    let refined = nelder_mead(&objective, &best.1, 0.1, 1e-13, 4000);
    let x = if objective(&refined) < -best.0 { refined } else { best.1.to_vec() };
    let (b, b2) = (direction(x[0], x[1]), direction(x[2], x[3]));
    let (value, a, a2) = best_for_photon_axes(&t, b, b2);
    ChshResult { value, axes: [a, a2, b, b2], horodecki_bound: horodecki_bound(rho) }
}

/// Minimizes `f` from `start` with a simplex of initial edge `scale`.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], scale: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = (0..=n)
        .map(|k| {
            let mut x = start.to_vec();
            if k > 0 {
                x[k - 1] += scale;
            }
            let v = f(&x);
            (x, v)
        })
        .collect();
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[n].1 - simplex[0].1).abs() < tol {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|i| simplex[..n].iter().map(|(x, _)| x[i]).sum::<f64>() / n as f64).collect();
        let along = |w: f64| -> Vec<f64> { (0..n).map(|i| centroid[i] + w * (simplex[n].0[i] - centroid[i])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[n].1 { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for i in 0..n {
                        x[i] = best[i] + 0.5 * (x[i] - best[i]);
                    }
                    *v = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0).0
}

/// Joint fit of `Re = A cos(φ + φ₀)` and `Im = A sin(φ + φ₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidFit {
    /// `2A`, so a perfect maximally entangled family gives 1.
    pub contrast: f64,
    pub amplitude: f64,
    pub phase_offset: f64,
    /// `(Re − fit, Im − fit)` per input point.
    pub residuals: Vec<(f64, f64)>,
}

impl SinusoidFit {
    pub fn evaluate(&self, phase: f64) -> (f64, f64) {
        let arg = phase + self.phase_offset;
        (self.amplitude * arg.cos(), self.amplitude * arg.sin())
    }
}

/// Least-squares fit shared by both quadratures; with `a = A cos φ₀`,
/// `b = A sin φ₀` the model is linear and its normal matrix is `n·I`.
pub fn sinusoid_fit(phases: &[f64], re: &[f64], im: &[f64]) -> Result<SinusoidFit, AnalysisError> {
    assert_eq!(phases.len(), re.len());
    assert_eq!(phases.len(), im.len());
    let mut distinct: Vec<f64> = phases.iter().map(|p| p.rem_euclid(TAU)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if distinct.len() < 2 {
        return Err(AnalysisError::InsufficientPhases(distinct.len()));
    }
    let n = phases.len() as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for ((p, r), i) in phases.iter().zip(re).zip(im) {
        let (s, c) = p.sin_cos();
        a += r * c + i * s;
        b += i * c - r * s;
    }
    a /= n;
    b /= n;
    let amplitude = a.hypot(b);
    let phase_offset = b.atan2(a);
    let mut fit = SinusoidFit { contrast: 2.0 * amplitude, amplitude, phase_offset, residuals: Vec::new() };
    fit.residuals = phases
        .iter()
        .zip(re)
        .zip(im)
        .map(|((p, r), i)| {
            let (fr, fi) = fit.evaluate(*p);
            (r - fr, i - fi)
        })
        .collect();
    Ok(fit)
}

/// Summary of a bootstrap run.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapSummary {
    pub std: f64,
    pub mean: f64,
    pub failures: usize,
    pub resamples: usize,
}

/// Draws a multinomial resample of every setting's joint outcomes,
/// preserving each setting's detected total.
pub fn resample_counts(counts: &CountTable, rng: &mut ChaCha8Rng) -> CountTable {
    let mut out = CountTable::new();
    for (setting, c) in counts.iter() {
        let total = c.detected();
        let mut joint = [0u64; 4];
        let mut remaining = total;
        let mut mass_left = total as f64;
        for k in 0..4 {
            if remaining == 0 {
                break;
            }
            if k == 3 || mass_left <= c.joint[k] as f64 {
                joint[k] = remaining;
                break;
            }
            let p = (c.joint[k] as f64 / mass_left).clamp(0.0, 1.0);
            let draw = Binomial::new(remaining, p).expect("valid binomial").sample(rng);
            joint[k] = draw;
            remaining -= draw;
            mass_left -= c.joint[k] as f64;
        }
        out.insert(setting, SettingCounts { joint, none: c.none });
    }
    out
}

/// Standard deviation of `estimator` over `resamples` multinomial
/// resamples. Resample `r` draws from stream `r` of `seed`; failed
/// resamples are excluded, with a warning above 1 %.
pub fn bootstrap<E>(
    counts: &CountTable,
    estimator: &(dyn Fn(&CountTable) -> Result<f64, E> + Sync),
    resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary, AnalysisError> {
    if resamples < 100 {
        return Err(AnalysisError::TooFewResamples(resamples));
    }
    let values: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            estimator(&resample_counts(counts, &mut rng)).ok().filter(|v| v.is_finite())
        })
        .collect();
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failures = resamples - ok.len();
    if ok.len() < 2 {
        return Err(AnalysisError::BootstrapFailed);
    }
    if failures as f64 > 0.01 * resamples as f64 {
        warn!("estimator failed on {failures} of {resamples} bootstrap resamples");
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
    Ok(BootstrapSummary { std: var.sqrt(), mean, failures, resamples })
}

/// Standard deviation of `estimator` over multinomial resamples.
pub fn bootstrap_std<E>(
    counts: &CountTable,
    estimator: &(dyn Fn(&CountTable) -> Result<f64, E> + Sync),
    resamples: usize,
    seed: u64,
) -> Result<f64, AnalysisError> {
    Ok(bootstrap(counts, estimator, resamples, seed)?.std)
}

/// `phase` shifted by a multiple of 2π to lie within π of `reference`.
pub fn unwrap_near(phase: f64, reference: f64) -> f64 {
    phase - TAU * ((phase - reference) / TAU).round()
}

/// Witness values of a reconstructed state with bootstrap uncertainties.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessReport {
    pub fidelity: f64,
    pub fidelity_std: f64,
    pub concurrence: f64,
    pub concurrence_std: f64,
    pub chsh: f64,
    pub chsh_std: f64,
    pub coherence_phase: f64,
    pub coherence_phase_std: f64,
}

impl WitnessReport {
    /// Flat `key = value` lines.
    pub fn to_record(&self) -> String {
        let fields = [
            ("fidelity", self.fidelity),
            ("fidelity_std", self.fidelity_std),
            ("concurrence", self.concurrence),
            ("concurrence_std", self.concurrence_std),
            ("chsh", self.chsh),
            ("chsh_std", self.chsh_std),
            ("coherence_phase", self.coherence_phase),
            ("coherence_phase_std", self.coherence_phase_std),
        ];
        fields.iter().map(|(k, v)| format!("{k} = {v:.6}\n")).collect()
    }
}

/// Witness point estimates of `rho` against `target`, without uncertainties.
pub fn witness_values(rho: &Operator, target: &Ket) -> Result<[f64; 4], AnalysisError> {
    Ok([
        fidelity(rho, target)?,
        concurrence(rho),
        chsh_optimal(rho).value,
        coherence_phase(rho).unwrap_or(f64::NAN),
    ])
}

/// Reconstructs `counts` by MLE and bootstraps every witness.
pub fn witness_report(
    counts: &CountTable,
    target: &Ket,
    resamples: usize,
    seed: u64,
    opts: MleOptions,
) -> Result<WitnessReport, AnalysisError> {
    let rho = mle_reconstruct(counts, opts)?.rho_hat;
    let central = witness_values(&rho, target)?;
    let resampled: Vec<Option<[f64; 4]>> = {
        if resamples < 100 {
            return Err(AnalysisError::TooFewResamples(resamples));
        }
        (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                let rc = resample_counts(counts, &mut rng);
                let rho = mle_reconstruct(&rc, opts).ok()?.rho_hat;
                witness_values(&rho, target).ok()
            })
            .collect()
    };
    let ok: Vec<[f64; 4]> = resampled.iter().flatten().copied().collect();
    let failures = resamples - ok.len();
    if failures as f64 > 0.01 * resamples as f64 {
        warn!("reconstruction failed on {failures} of {resamples} bootstrap resamples");
    }
    if ok.len() < 2 {
        return Err(AnalysisError::BootstrapFailed);
    }
    let std_of = |k: usize, wrap: bool| -> f64 {
        let vals: Vec<f64> = ok
            .iter()
            .map(|v| if wrap { unwrap_near(v[k], central[k]) } else { v[k] })
            .filter(|v| v.is_finite())
            .collect();
        if vals.len() < 2 {
            return f64::NAN;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    };
    Ok(WitnessReport {
        fidelity: central[0],
        fidelity_std: std_of(0, false),
        concurrence: central[1],
        concurrence_std: std_of(1, false),
        chsh: central[2],
        chsh_std: std_of(2, false),
        coherence_phase: central[3],
        coherence_phase_std: std_of(3, true),
    })
}

/// Coherence phase of one detection-time bin.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeBinPhase {
    pub start: f64,
    pub end: f64,
    /// Mean detection time of the bin's events.
    pub center: f64,
    pub events: usize,
    /// Unwrapped relative to the previous bin.
    pub phase: f64,
    pub std: f64,
}

/// Options of [`phase_vs_timebin`].
#[derive(Clone, Copy, Debug)]
pub struct TimeBinOptions {
    pub bins: usize,
    pub min_events: usize,
    pub resamples: usize,
    pub seed: u64,
    pub mle: MleOptions,
}

impl Default for TimeBinOptions {
    fn default() -> Self {
        Self { bins: 5, min_events: 500, resamples: 200, seed: 0, mle: MleOptions::default() }
    }
}

/// Splits events into equal-population detection-time bins, reconstructs
/// each bin (swap partners summed) and reports its coherence phase with a
/// bootstrap uncertainty.
pub fn phase_vs_timebin(events: &[DetectionEvent], opts: TimeBinOptions) -> Result<Vec<TimeBinPhase>, AnalysisError> {
    let bins = opts.bins.max(1);
    let mut sorted: Vec<&DetectionEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.detection_time.total_cmp(&b.detection_time).then(a.sequence_index.cmp(&b.sequence_index)));
    let n = sorted.len();
    let mut out: Vec<TimeBinPhase> = Vec::with_capacity(bins);
    for bin in 0..bins {
        let chunk: Vec<DetectionEvent> = sorted[bin * n / bins..(bin + 1) * n / bins].iter().map(|e| (*e).clone()).collect();
        if chunk.len() < opts.min_events {
            return Err(AnalysisError::UnderPopulatedBin { bin, events: chunk.len(), floor: opts.min_events });
        }
        let start = chunk.first().map_or(0.0, |e| e.detection_time);
        let end = chunk.last().map_or(0.0, |e| e.detection_time);
        let center = chunk.iter().map(|e| e.detection_time).sum::<f64>() / chunk.len() as f64;
        let counts = counts_in_window(&chunk, f64::NEG_INFINITY, f64::INFINITY).compensated();
        let rho = mle_reconstruct(&counts, opts.mle)?.rho_hat;
        let raw = coherence_phase(&rho)?;
        let phase = match out.last() {
            Some(prev) => unwrap_near(raw, prev.phase),
            None => raw,
        };
        let estimator = |c: &CountTable| -> Result<f64, AnalysisError> {
            let rho = mle_reconstruct(c, opts.mle)?.rho_hat;
            Ok(unwrap_near(coherence_phase(&rho)?, phase))
        };
        let std = bootstrap_std(&counts, &estimator, opts.resamples, opts.seed.wrapping_add(bin as u64))?;
        out.push(TimeBinPhase { start, end, center, events: chunk.len(), phase, std });
    }
    Ok(out)
}

/// Weighted least-squares slope of phase against bin centre, with its
/// standard error; `None` for fewer than two bins.
pub fn phase_slope(points: &[TimeBinPhase]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let w: Vec<f64> = points.iter().map(|p| 1.0 / p.std.max(1e-12).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let mean_t = points.iter().zip(&w).map(|(p, w)| w * p.center).sum::<f64>() / sw;
    let mean_y = points.iter().zip(&w).map(|(p, w)| w * p.phase).sum::<f64>() / sw;
    let stt: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.center - mean_t).powi(2)).sum();
    let sty: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.center - mean_t) * (p.phase - mean_y)).sum();
    if stt <= 0.0 {
        return None;
    }
    Some((sty / stt, (1.0 / stt).sqrt()))
}
