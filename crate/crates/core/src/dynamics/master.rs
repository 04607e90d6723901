//! Fixed-step RK4 propagation of the Lindblad master equation.

use num_complex::Complex64 as C64;

use super::DynamicsError;
use crate::linalg::{Operator, ZERO};

/// Step control for [`evolve_master`].
#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    /// Accept once halving the step changes no grid state by more than this,
    /// and the trace stays within this of its initial value.
    pub tol: f64,
    /// Maximum number of step halvings after the initial estimate.
    pub max_refinements: u32,
    /// Initial step as a fraction of `1/‖generator‖`.
    pub step_fraction: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_refinements: 8, step_fraction: 0.5 }
    }
}

/// Single nonzero entry of a jump operator.
#[derive(Clone, Copy, Debug)]
struct Entry {
    row: usize,
    col: usize,
    val: C64,
}

/// Dissipative part of the generator, cached once per evolution.
struct Dissipator {
    jumps: Vec<Vec<Entry>>,
    /// `½ Σ L†L`
    anticommutator: Operator,
}

impl Dissipator {
    fn new(collapse: &[Operator], dim: usize) -> Self {
        let mut anticommutator = Operator::zeros(dim);
        let mut jumps = Vec::with_capacity(collapse.len());
        for l in collapse {
            anticommutator += &(&l.dagger() * l).scale_re(0.5);
            let mut entries = Vec::new();
            for row in 0..dim {
                for col in 0..dim {
                    let val = l[(row, col)];
                    if val != ZERO {
                        entries.push(Entry { row, col, val });
                    }
                }
            }
            jumps.push(entries);
        }
        Self { jumps, anticommutator }
    }

    /// `dρ/dt` for Hermitian `ρ`.
    fn generator(&self, h: &Operator, rho: &Operator) -> Operator {
        let n = rho.dim();
        let effective = Operator::from_fn(n, |i, j| C64::new(0.0, -1.0) * h[(i, j)] - self.anticommutator[(i, j)]);
        let a = &effective * rho;
        let mut out = Operator::from_fn(n, |i, j| a[(i, j)] + a[(j, i)].conj());
        for entries in &self.jumps {
            for ea in entries {
                for eb in entries {
                    out[(ea.row, eb.row)] += ea.val * rho[(ea.col, eb.col)] * eb.val.conj();
                }
            }
        }
        out
    }

    fn norm_bound(&self) -> f64 {
        let jump: f64 = self.jumps.iter().map(|e| e.iter().map(|x| x.val.norm_sqr()).sum::<f64>()).sum();
        self.anticommutator.max_row_sum() + jump
    }
}

fn rk4_step(d: &Dissipator, h: &dyn Fn(f64) -> Operator, rho: &Operator, t: f64, dt: f64) -> Operator {
    let h_mid = h(t + 0.5 * dt);
    let k1 = d.generator(&h(t), rho);
    let k2 = d.generator(&h_mid, &(rho + &k1.scale_re(0.5 * dt)));
    let k3 = d.generator(&h_mid, &(rho + &k2.scale_re(0.5 * dt)));
    let k4 = d.generator(&h(t + dt), &(rho + &k3.scale_re(dt)));
    let mut incr = k1;
    incr += &k2.scale_re(2.0);
    incr += &k3.scale_re(2.0);
    incr += &k4;
    rho + &incr.scale_re(dt / 6.0)
}

fn propagate(
    d: &Dissipator,
    h: &dyn Fn(f64) -> Operator,
    rho0: &Operator,
    grid: &[f64],
    max_step: f64,
    refinement: u32,
) -> Vec<Operator> {
    let mut out = Vec::with_capacity(grid.len());
    let mut rho = rho0.clone();
    out.push(rho.clone());
    for w in grid.windows(2) {
        let span = w[1] - w[0];
        let steps = ((span / max_step).ceil().max(1.0) as usize) << refinement;
        let dt = span / steps as f64;
        for k in 0..steps {
            rho = rk4_step(d, h, &rho, w[0] + k as f64 * dt, dt);
        }
        // Re-symmetrize to keep round-off from accumulating anti-Hermitian parts.
        rho = rho.hermitian_part();
        out.push(rho.clone());
    }
    out
}

/// Propagates `ρ₀` under `dρ/dt = −i[H(t), ρ] + Σ (LρL† − ½{L†L, ρ})` and
/// returns `ρ` at every grid time (the first entry is `ρ₀` at `grid[0]`).
///
/// The step is halved until two successive refinements agree to
/// `opts.tol` on every grid state and the trace drifts less than `opts.tol`.
pub fn evolve_master(
    h: &dyn Fn(f64) -> Operator,
    rho0: &Operator,
    collapse: &[Operator],
    grid: &[f64],
    opts: EvolveOptions,
) -> Result<Vec<Operator>, DynamicsError> {
    let dim = rho0.dim();
    if let Some(bad) = collapse.iter().find(|l| l.dim() != dim) {
        return Err(DynamicsError::DimensionMismatch { expected: dim, got: bad.dim() });
    }
    let h0 = h(grid.first().copied().unwrap_or(0.0));
    if h0.dim() != dim {
        return Err(DynamicsError::DimensionMismatch { expected: dim, got: h0.dim() });
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DynamicsError::InvalidGrid);
    }
    if grid.len() == 1 {
        return Ok(vec![rho0.clone()]);
    }

    let d = Dissipator::new(collapse, dim);
    let rate = (h0.max_row_sum() + d.norm_bound()).max(f64::MIN_POSITIVE);
    let max_step = opts.step_fraction / rate;
    let trace0 = rho0.trace().re;

    let mut coarse = propagate(&d, h, rho0, grid, max_step, 0);
    let mut deviation = f64::INFINITY;
    for refinement in 1..=opts.max_refinements + 1 {
        let fine = propagate(&d, h, rho0, grid, max_step, refinement);
        deviation = coarse.iter().zip(&fine).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
        let drift = fine.iter().map(|r| (r.trace().re - trace0).abs()).fold(0.0, f64::max);
        if deviation < opts.tol && drift < opts.tol {
            return Ok(fine);
        }
        deviation = deviation.max(drift);
        coarse = fine;
    }
    Err(DynamicsError::StepSizeFailure { refinements: opts.max_refinements, deviation })
}
