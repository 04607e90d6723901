//! Bichromatic cavity-Raman dynamics.
//!
//! Two models of the same process are provided:
//!
//! * the **rotating-frame model** with the excited state `|P⟩` adiabatically
//!   eliminated. Its Hamiltonian on `{|S,0⟩, |D,1_H⟩, |D′,1_V⟩}` is
//!   time-independent when both Raman resonances hold, and it drives the
//!   event Monte Carlo;
//! * the **full model** on `{|S,0⟩, |P,0⟩, |D,1_H⟩, |D′,1_V⟩, |D,0⟩, |D′,0⟩, loss}`
//!   with both drive tones and the explicit beat between them. It exists to
//!   check the elimination.
//!
//! Both are expressed in the frame co-rotating with the two drive tones, in
//! which `|D⟩` and `|D′⟩` are degenerate once `ω₁ − ω₂` matches the Zeeman
//! splitting. Parameters are SI: angular frequencies in rad/s, times in s.

mod master;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use log::warn;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::linalg::{Ket, Operator, ONE, ZERO};

pub use master::{evolve_master, EvolveOptions};

/// `2π × 1 MHz` in rad/s.
pub const MHZ: f64 = 2.0 * PI * 1e6;
/// One microsecond in s.
pub const US: f64 = 1e-6;

/// RMS drive amplitude of the two tones that yields ≈ 0.9 cavity-photon generation
/// probability within the 40 μs pulse at the default cavity parameters.
pub const DEFAULT_RABI_MHZ: f64 = 4.922;

/// Zeeman splitting `ω_D′ − ω_D` between `m = −5/2` and `m = −3/2` of
/// `3²D₅/₂` at 2.96 G.
pub const DEFAULT_ZEEMAN_MHZ: f64 = -4.973;

/// Fraction of scattering events from `|P⟩` that return the ion to `|S⟩`
/// (`P₃/₂ → S₁/₂` branching in ⁴⁰Ca⁺).
pub const DEFAULT_SCATTER_RETURN: f64 = 0.935;

/// Residual two-photon detuning mismatch of the noisy preset, in kHz.
/// Its dephasing costs about 0.9% fidelity, standing in for imperfect
/// overlap of the two emission paths.
pub const LAB_RAMAN_MISMATCH_KHZ: f64 = 3.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("Raman detuning {which} is zero; adiabatic elimination is undefined")]
    ZeroDetuning { which: &'static str },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("integrator did not converge after {refinements} step halvings (deviation {deviation:.3e})")]
    StepSizeFailure { refinements: u32, deviation: f64 },
    #[error("no single-photon amplitude at t = {t:.3e} s")]
    ZeroEmission { t: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time grid must be non-empty and strictly increasing")]
    InvalidGrid,
}

/// Physical rates, detunings and drive settings of one Raman pulse.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    /// Atom-cavity coupling `g`.
    pub g: f64,
    /// Cavity-field decay `κ`; photons leave at `2κ`.
    pub kappa: f64,
    /// Atomic polarization decay `γ` of `|P⟩`; population decays at `2γ`.
    pub gamma: f64,
    /// Drive amplitudes `Ω₁`, `Ω₂`.
    pub rabi1: f64,
    pub rabi2: f64,
    /// Detunings of the two tones from the `S–P` transition.
    pub delta1: f64,
    pub delta2: f64,
    /// Cavity detuning `Δc₁` from the `P–D` transition.
    pub cavity_detuning: f64,
    /// Zeeman splitting `Δ_{D,D′} = ω_D′ − ω_D`.
    pub zeeman_splitting: f64,
    /// Clebsch-Gordan and polarization projection factors `G₁`, `G₂`.
    pub cg1: f64,
    pub cg2: f64,
    /// Relative phase of the two tones.
    pub raman_phase: f64,
    /// Raman pulse length.
    pub pulse_duration: f64,
    /// Fraction of `|P⟩` scattering that returns to `|S⟩`; the rest is lost.
    pub scatter_return: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Level frequencies of the rotating-frame Hamiltonian, with the optical
/// carrier absorbed into the drive detunings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelFrequencies {
    /// `|S⟩` including its light shift.
    pub omega_s: f64,
    pub omega_d: f64,
    pub omega_dp: f64,
    pub omega_c: f64,
}

impl SystemParams {
    /// `(g, κ, γ) = 2π × (1.4, 0.05, 11.2)` MHz, `Δc₁ = −2π × 400` MHz,
    /// a 40 μs pulse, tones balanced for equal effective couplings and tuned
    /// onto both Raman resonances.
    pub fn nominal() -> Self {
        Self {
            g: 1.4 * MHZ,
            kappa: 0.05 * MHZ,
            gamma: 11.2 * MHZ,
            rabi1: DEFAULT_RABI_MHZ * MHZ,
            rabi2: DEFAULT_RABI_MHZ * MHZ,
            delta1: -400.0 * MHZ,
            delta2: (-400.0 + DEFAULT_ZEEMAN_MHZ) * MHZ,
            cavity_detuning: -400.0 * MHZ,
            zeeman_splitting: DEFAULT_ZEEMAN_MHZ * MHZ,
            cg1: FRAC_1_SQRT_2,
            cg2: FRAC_1_SQRT_2,
            raman_phase: 0.0,
            pulse_duration: 40.0 * US,
            scatter_return: DEFAULT_SCATTER_RETURN,
        }
        .with_mixing_angle(PI / 4.0)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in [("g", self.g), ("kappa", self.kappa), ("gamma", self.gamma), ("pulse_duration", self.pulse_duration)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        for (name, v) in [("rabi1", self.rabi1), ("rabi2", self.rabi2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DynamicsError::InvalidParameter { name, reason: format!("must be non-negative, got {v}") });
            }
        }
        if !(0.0..=1.0).contains(&self.scatter_return) {
            return Err(DynamicsError::InvalidParameter {
                name: "scatter_return",
                reason: format!("must lie in [0, 1], got {}", self.scatter_return),
            });
        }
        if self.delta1 == 0.0 {
            return Err(DynamicsError::ZeroDetuning { which: "delta1" });
        }
        if self.delta2 == 0.0 {
            return Err(DynamicsError::ZeroDetuning { which: "delta2" });
        }
        for (which, delta, rabi) in [("delta1", self.delta1, self.rabi1), ("delta2", self.delta2, self.rabi2)] {
            if delta.abs() < 10.0 * rabi.max(self.g) {
                warn!(
                    "|{which}| = 2π×{:.3} MHz is less than 10× max(Ω, g); adiabatic elimination is unreliable",
                    delta.abs() / MHZ
                );
            }
        }
        Ok(())
    }

    /// Cavity detuning of the second path, `Δc₂ = Δc₁ + Δ_{D,D′}`.
    pub fn cavity_detuning2(&self) -> f64 {
        self.cavity_detuning + self.zeeman_splitting
    }

    /// Two-photon detunings `Δcᵢ − Δᵢ` of the two paths.
    pub fn two_photon_detunings(&self) -> (f64, f64) {
        (self.cavity_detuning - self.delta1, self.cavity_detuning2() - self.delta2)
    }

    /// Light shift of `|S⟩` from both tones, `Ω₁²/Δ₁ + Ω₂²/Δ₂`.
    pub fn ground_light_shift(&self) -> f64 {
        self.rabi1 * self.rabi1 / self.delta1 + self.rabi2 * self.rabi2 / self.delta2
    }

    /// Rate at which `|S⟩` population scatters off `|P⟩`.
    pub fn scattering_rate(&self) -> f64 {
        2.0 * self.gamma * ((self.rabi1 / self.delta1).powi(2) + (self.rabi2 / self.delta2).powi(2))
    }

    /// Sets `Δ₁`, `Δ₂` so that both Raman paths are resonant with the
    /// light-shifted `|S⟩`.
    pub fn tuned_to_resonance(mut self) -> Self {
        self.delta1 = self.cavity_detuning;
        self.delta2 = self.cavity_detuning2();
        if self.delta1 == 0.0 || self.delta2 == 0.0 {
            return self;
        }
        for _ in 0..100 {
            let shift = self.ground_light_shift();
            let d1 = self.cavity_detuning - shift;
            let d2 = self.cavity_detuning2() - shift;
            let done = (d1 - self.delta1).abs() + (d2 - self.delta2).abs() < 1e-9;
            self.delta1 = d1;
            self.delta2 = d2;
            if done {
                break;
            }
        }
        self
    }

    /// Moves the second tone so that the path-2 two-photon detuning exceeds
    /// path 1 by `mismatch`; the ion coherence phase then advances at
    /// `+mismatch` with photon-detection time.
    pub fn with_raman_mismatch(mut self, mismatch: f64) -> Self {
        self.delta2 -= mismatch;
        self
    }

    /// Splits the current total drive power between the tones so that
    /// `|g₂ᵉᶠᶠ/g₁ᵉᶠᶠ| = tan α`, retuning onto resonance.
    pub fn with_mixing_angle(mut self, alpha: f64) -> Self {
        let power = self.rabi1.hypot(self.rabi2);
        for _ in 0..20 {
            // Ω₂/Ω₁ such that Ω₂G₂/Δ₂ = tan α · Ω₁G₁/Δ₁
            let ratio_sin_cos = (self.cg1 / self.delta1).abs() / (self.cg2 / self.delta2).abs();
            let (s, c) = alpha.sin_cos();
            let (w1, w2) = (c, s * ratio_sin_cos);
            let norm = w1.hypot(w2);
            self.rabi1 = power * w1 / norm;
            self.rabi2 = power * w2 / norm;
            self = self.tuned_to_resonance();
        }
        self
    }

    /// Rescales both tones by `factor`, retuning onto resonance.
    pub fn with_drive_scale(mut self, factor: f64) -> Self {
        self.rabi1 *= factor;
        self.rabi2 *= factor;
        self.tuned_to_resonance()
    }

    /// Level frequencies appearing on the diagonal of the rotating-frame
    /// Hamiltonian. The cavity and `|D⟩` serve as the zero of energy.
    pub fn level_frequencies(&self) -> LevelFrequencies {
        LevelFrequencies { omega_s: self.ground_light_shift(), omega_d: 0.0, omega_dp: self.zeeman_splitting, omega_c: 0.0 }
    }

    /// Drive frequencies `(ω₁, ω₂)` on the same scale as
    /// [`Self::level_frequencies`]; `ω₁ − ω₂ = ω_D′ − ω_D` exactly when both
    /// paths share the same two-photon detuning.
    pub fn drive_frequencies(&self) -> (f64, f64) {
        let (d1, d2) = self.two_photon_detunings();
        (d1, d2 - self.zeeman_splitting)
    }
}

/// `gᵢᵉᶠᶠ = Ωᵢ Gᵢ g / Δᵢ`
pub fn effective_couplings(p: &SystemParams) -> Result<(f64, f64), DynamicsError> {
    if p.delta1 == 0.0 {
        return Err(DynamicsError::ZeroDetuning { which: "delta1" });
    }
    if p.delta2 == 0.0 {
        return Err(DynamicsError::ZeroDetuning { which: "delta2" });
    }
    Ok((p.rabi1 * p.cg1 * p.g / p.delta1, p.rabi2 * p.cg2 * p.g / p.delta2))
}

/// `α = arctan(g₂ᵉᶠᶠ/g₁ᵉᶠᶠ)` taken in `[0, π/2]`, and the phase of the
/// generated state (the tone phase, plus π when the couplings differ in
/// sign).
pub fn mixing_angle_and_phase(p: &SystemParams) -> Result<(f64, f64), DynamicsError> {
    let (g1, g2) = effective_couplings(p)?;
    let alpha = g2.abs().atan2(g1.abs());
    let flip = if g1 * g2 < 0.0 { PI } else { 0.0 };
    Ok((alpha, p.raman_phase + flip))
}

/// Joint ion ⊗ photon basis index: ion `{D, D′}` ⊗ photon `{H, V}`.
pub mod joint {
    pub const DH: usize = 0;
    pub const DV: usize = 1;
    pub const DPH: usize = 2;
    pub const DPV: usize = 3;
}

/// `cos α |DH⟩ + e^{iφ} sin α |D′V⟩`
pub fn target_state(alpha: f64, phi: f64) -> Ket {
    let mut amps = vec![ZERO; 4];
    amps[joint::DH] = C64::new(alpha.cos(), 0.0);
    amps[joint::DPV] = C64::from_polar(alpha.sin(), phi);
    Ket::new(amps)
}

/// Basis layout of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Model {
    /// `[S0, D1H, D′1V, D0, D′0, loss]`
    Rotating,
    /// `[S0, P0, D1H, D′1V, D0, D′0, loss]`
    Full,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    s0: usize,
    d1h: usize,
    dp1v: usize,
    d0: usize,
    dp0: usize,
    loss: usize,
    dim: usize,
}

impl Model {
    fn layout(self) -> Layout {
        match self {
            Model::Rotating => Layout { s0: 0, d1h: 1, dp1v: 2, d0: 3, dp0: 4, loss: 5, dim: 6 },
            Model::Full => Layout { s0: 0, d1h: 2, dp1v: 3, d0: 4, dp0: 5, loss: 6, dim: 7 },
        }
    }

    pub fn dim(self) -> usize {
        self.layout().dim
    }
}

/// Hermitian 3×3 Hamiltonian on `{|S,0⟩, |D,1_H⟩, |D′,1_V⟩}` after
/// eliminating `|P⟩`; the off-diagonal terms rotating at `|ω₁ − ω₂|` are
/// dropped.
pub fn hamiltonian_rotating(p: &SystemParams) -> Result<Operator, DynamicsError> {
    let (g1, g2) = effective_couplings(p)?;
    let lv = p.level_frequencies();
    let (w1, w2) = p.drive_frequencies();
    let mut h = Operator::diagonal(&[lv.omega_s - w1, lv.omega_d + lv.omega_c, lv.omega_dp - (w1 - w2) + lv.omega_c]);
    let c1 = C64::new(g1, 0.0);
    let c2 = C64::from_polar(g2, p.raman_phase);
    h[(1, 0)] = c1;
    h[(0, 1)] = c1.conj();
    h[(2, 0)] = c2;
    h[(0, 2)] = c2.conj();
    Ok(h)
}

fn embed_rotating(h3: &Operator, p: &SystemParams) -> Operator {
    let l = Model::Rotating.layout();
    let mut h = Operator::zeros(l.dim);
    let idx = [l.s0, l.d1h, l.dp1v];
    for i in 0..3 {
        for j in 0..3 {
            h[(idx[i], idx[j])] = h3[(i, j)];
        }
    }
    // After the photon leaves, |D,0⟩ and |D′,0⟩ keep the frame energies of
    // their one-photon partners minus the cavity (which is zero here).
    let lv = p.level_frequencies();
    let (w1, w2) = p.drive_frequencies();
    h[(l.d0, l.d0)] = C64::new(lv.omega_d, 0.0);
    h[(l.dp0, l.dp0)] = C64::new(lv.omega_dp - (w1 - w2), 0.0);
    h
}

/// Collapse operators of the eliminated model.
fn rotating_collapse(p: &SystemParams) -> Vec<Operator> {
    let l = Model::Rotating.layout();
    let cav = (2.0 * p.kappa).sqrt();
    let scatter = p.scattering_rate();
    vec![
        Operator::transition(l.dim, l.d0, l.d1h).scale_re(cav),
        Operator::transition(l.dim, l.dp0, l.dp1v).scale_re(cav),
        Operator::transition(l.dim, l.loss, l.s0).scale_re((scatter * (1.0 - p.scatter_return)).sqrt()),
        Operator::transition(l.dim, l.s0, l.s0).scale_re((scatter * p.scatter_return).sqrt()),
    ]
}

/// Time-dependent Hamiltonian of the full single-excitation model on
/// `[S0, P0, D1H, D′1V, D0, D′0, loss]`.
///
/// Tone 1 defines the frame of `|P⟩`; tone 2 and the path-2 cavity coupling
/// carry the beat `e^{∓i(Δ₂−Δ₁)t}`.
pub fn hamiltonian_full(p: &SystemParams, t: f64) -> Operator {
    let l = Model::Full.layout();
    let p0 = 1;
    let (d1, d2) = p.two_photon_detunings();
    let beat = p.delta2 - p.delta1;
    let mut h = Operator::zeros(l.dim);
    h[(p0, p0)] = C64::new(-p.delta1, 0.0);
    h[(l.d1h, l.d1h)] = C64::new(d1, 0.0);
    h[(l.d0, l.d0)] = C64::new(d1, 0.0);
    h[(l.dp1v, l.dp1v)] = C64::new(d2, 0.0);
    h[(l.dp0, l.dp0)] = C64::new(d2, 0.0);

    let drive = C64::new(p.rabi1, 0.0) + C64::from_polar(p.rabi2, p.raman_phase - beat * t);
    h[(p0, l.s0)] = drive;
    h[(l.s0, p0)] = drive.conj();
    let c1 = C64::new(p.cg1 * p.g, 0.0);
    h[(l.d1h, p0)] = c1;
    h[(p0, l.d1h)] = c1.conj();
    let c2 = C64::from_polar(p.cg2 * p.g, beat * t);
    h[(l.dp1v, p0)] = c2;
    h[(p0, l.dp1v)] = c2.conj();
    h
}

fn full_collapse(p: &SystemParams) -> Vec<Operator> {
    let l = Model::Full.layout();
    let p0 = 1;
    let cav = (2.0 * p.kappa).sqrt();
    vec![
        Operator::transition(l.dim, l.d0, l.d1h).scale_re(cav),
        Operator::transition(l.dim, l.dp0, l.dp1v).scale_re(cav),
        Operator::transition(l.dim, l.s0, p0).scale_re((2.0 * p.gamma * p.scatter_return).sqrt()),
        Operator::transition(l.dim, l.loss, p0).scale_re((2.0 * p.gamma * (1.0 - p.scatter_return)).sqrt()),
    ]
}

/// Uniform grid of `points` times over the pulse.
pub fn pulse_grid(p: &SystemParams, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|k| p.pulse_duration * k as f64 / (n - 1) as f64).collect()
}

/// `ρ(t)` over the Raman pulse, starting from `|S,0⟩`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub model: Model,
    pub times: Vec<f64>,
    pub states: Vec<Operator>,
    /// Frame energies of `|D,0⟩` and `|D′,0⟩`, which set the phase the ion
    /// picks up between photon detection and readout.
    post_detection_energies: (f64, f64),
}

fn initial_state(model: Model) -> Operator {
    let l = model.layout();
    let mut rho = Operator::zeros(l.dim);
    rho[(l.s0, l.s0)] = ONE;
    rho
}

/// Evolves the eliminated model over the pulse.
pub fn simulate_rotating(p: &SystemParams, points: usize) -> Result<Trajectory, DynamicsError> {
    p.validate()?;
    let h = embed_rotating(&hamiltonian_rotating(p)?, p);
    let grid = pulse_grid(p, points);
    let l = Model::Rotating.layout();
    let states = evolve_master(&|_| h.clone(), &initial_state(Model::Rotating), &rotating_collapse(p), &grid, EvolveOptions::default())?;
    Ok(Trajectory {
        model: Model::Rotating,
        times: grid,
        states,
        post_detection_energies: (h[(l.d0, l.d0)].re, h[(l.dp0, l.dp0)].re),
    })
}

/// Evolves the full model over the pulse.
pub fn simulate_full(p: &SystemParams, points: usize, opts: EvolveOptions) -> Result<Trajectory, DynamicsError> {
    p.validate()?;
    let grid = pulse_grid(p, points);
    let states = evolve_master(&|t| hamiltonian_full(p, t), &initial_state(Model::Full), &full_collapse(p), &grid, opts)?;
    let (d1, d2) = p.two_photon_detunings();
    Ok(Trajectory { model: Model::Full, times: grid, states, post_detection_energies: (d1, d2) })
}

/// Emitted photon flux `I_X(t) = 2κ ⟨1_X⟩` for each polarization.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseShape {
    pub times: Vec<f64>,
    pub h: Vec<f64>,
    pub v: Vec<f64>,
}

fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1])).sum()
}

impl PulseShape {
    pub fn probability_h(&self) -> f64 {
        trapezoid(&self.times, &self.h)
    }

    pub fn probability_v(&self) -> f64 {
        trapezoid(&self.times, &self.v)
    }

    /// Probability that a photon leaves the cavity during the pulse.
    pub fn generation_probability(&self) -> f64 {
        self.probability_h() + self.probability_v()
    }

    /// L1 distance between the unit-area H and V shapes (0 for identical
    /// shapes, 2 for disjoint ones).
    pub fn shape_distance(&self) -> f64 {
        let (ph, pv) = (self.probability_h(), self.probability_v());
        let diff: Vec<f64> = self.h.iter().zip(&self.v).map(|(h, v)| (h / ph - v / pv).abs()).collect();
        trapezoid(&self.times, &diff)
    }

    /// Two-column `(t_us, intensity_per_us)` text for one polarization.
    pub fn to_table(&self, vertical: bool) -> String {
        let series = if vertical { &self.v } else { &self.h };
        let mut out = String::from("t_us,intensity_per_us\n");
        for (t, i) in self.times.iter().zip(series) {
            out.push_str(&format!("{:.6},{:.9e}\n", t / US, i * US));
        }
        out
    }
}

impl Trajectory {
    fn layout(&self) -> Layout {
        self.model.layout()
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn final_state(&self) -> &Operator {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Populations of `D` (either photon number) along the pulse.
    pub fn d_population(&self) -> Vec<f64> {
        let l = self.layout();
        self.states.iter().map(|r| r[(l.d1h, l.d1h)].re + r[(l.d0, l.d0)].re).collect()
    }

    /// Populations of `D′` (either photon number) along the pulse.
    pub fn dp_population(&self) -> Vec<f64> {
        let l = self.layout();
        self.states.iter().map(|r| r[(l.dp1v, l.dp1v)].re + r[(l.dp0, l.dp0)].re).collect()
    }

    pub fn s_population(&self) -> Vec<f64> {
        let l = self.layout();
        self.states.iter().map(|r| r[(l.s0, l.s0)].re).collect()
    }

    pub fn loss_population(&self) -> Vec<f64> {
        let l = self.layout();
        self.states.iter().map(|r| r[(l.loss, l.loss)].re).collect()
    }

    /// Ion state at the end of the pulse with the photon traced out,
    /// restricted to the `{D, D′}` qubit and renormalized.
    pub fn ion_marginal_final(&self) -> Operator {
        let pd = *self.d_population().last().unwrap_or(&0.0);
        let pdp = *self.dp_population().last().unwrap_or(&0.0);
        let total = pd + pdp;
        if total <= 0.0 {
            return Operator::identity(2).scale_re(0.5);
        }
        Operator::diagonal(&[pd / total, pdp / total])
    }

    /// `{D1H, D′1V}` block at time `t`, linearly interpolated on the grid.
    fn photon_block(&self, t: f64) -> Operator {
        let l = self.layout();
        let idx = [l.d1h, l.dp1v];
        let n = self.times.len();
        let k = self.times.partition_point(|&x| x <= t).clamp(1, n.max(2) - 1);
        if n == 1 {
            return self.states[0].submatrix(&idx);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let a = self.states[k - 1].submatrix(&idx);
        let b = self.states[k].submatrix(&idx);
        &a.scale_re(1.0 - w) + &b.scale_re(w)
    }
}

/// Photon flux of both polarizations along a trajectory.
pub fn emission_pulse(trajectory: &Trajectory, p: &SystemParams) -> PulseShape {
    let l = trajectory.layout();
    let rate = 2.0 * p.kappa;
    PulseShape {
        times: trajectory.times.clone(),
        h: trajectory.states.iter().map(|r| rate * r[(l.d1h, l.d1h)].re.max(0.0)).collect(),
        v: trajectory.states.iter().map(|r| rate * r[(l.dp1v, l.dp1v)].re.max(0.0)).collect(),
    }
}

/// Joint ion-photon state conditioned on detecting the photon at `t`, as
/// seen at readout (end of the pulse).
///
/// The `|D,1_H⟩`, `|D′,1_V⟩` amplitudes map onto `|DH⟩`, `|D′V⟩`; between
/// detection and readout the ion coherence evolves with the frame energies
/// of `|D⟩` and `|D′⟩`, which are degenerate on Raman resonance.
pub fn conditional_joint_state(trajectory: &Trajectory, t: f64, _p: &SystemParams) -> Result<Operator, DynamicsError> {
    let block = trajectory.photon_block(t);
    let norm = block[(0, 0)].re + block[(1, 1)].re;
    if !(norm > 1e-300) {
        return Err(DynamicsError::ZeroEmission { t });
    }
    let (e_d, e_dp) = trajectory.post_detection_energies;
    let wait = (trajectory.duration() - t).max(0.0);
    let phase = C64::from_polar(1.0, -(e_d - e_dp) * wait);
    let mut rho = Operator::zeros(4);
    rho[(joint::DH, joint::DH)] = C64::new(block[(0, 0)].re / norm, 0.0);
    rho[(joint::DPV, joint::DPV)] = C64::new(block[(1, 1)].re / norm, 0.0);
    let coh = block[(0, 1)] * phase / norm;
    rho[(joint::DH, joint::DPV)] = coh;
    rho[(joint::DPV, joint::DH)] = coh.conj();
    Ok(rho)
}

/// Finds the common drive scale that gives `target` photon generation
/// probability within the pulse (bisection on the rotating model).
pub fn calibrate_drive(p: &SystemParams, target: f64, points: usize) -> Result<SystemParams, DynamicsError> {
    let generation = |scale: f64| -> Result<f64, DynamicsError> {
        let q = p.clone().with_drive_scale(scale);
        Ok(emission_pulse(&simulate_rotating(&q, points)?, &q).generation_probability())
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while generation(hi)? < target {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(DynamicsError::InvalidParameter {
                name: "target",
                reason: format!("generation probability {target} is not reachable"),
            });
        }
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if generation(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(p.clone().with_drive_scale(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::check_density_matrix;

    fn fidelity(rho: &Operator, psi: &Ket) -> f64 {
        rho.expectation(&psi.projector())
    }

    #[test]
    fn symmetric_couplings_give_quarter_pi() {
        let p = SystemParams {
            rabi1: 5.0 * MHZ,
            rabi2: 5.0 * MHZ,
            delta1: -400.0 * MHZ,
            delta2: -400.0 * MHZ,
            ..SystemParams::nominal()
        };
        let (g1, g2) = effective_couplings(&p).unwrap();
        assert_eq!(g1, g2);
        let (alpha, _) = mixing_angle_and_phase(&p).unwrap();
        assert!((alpha - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn effective_coupling_hand_value() {
        let p = SystemParams {
            rabi1: 10.0 * MHZ,
            cg1: 0.5,
            g: 1.4 * MHZ,
            delta1: 400.0 * MHZ,
            ..SystemParams::nominal()
        };
        let (g1, _) = effective_couplings(&p).unwrap();
        assert!((g1 / MHZ - 0.0175).abs() < 1e-12);
    }

    #[test]
    fn doubling_second_tone_doubles_second_coupling() {
        let p = SystemParams::nominal();
        let (g1, g2) = effective_couplings(&p).unwrap();
        let q = SystemParams { rabi2: 2.0 * p.rabi2, ..p.clone() };
        let (h1, h2) = effective_couplings(&q).unwrap();
        assert_eq!(g1, h1);
        assert!((h2 - 2.0 * g2).abs() < 1e-12 * g2.abs());
        let (a, _) = mixing_angle_and_phase(&p).unwrap();
        let (b, _) = mixing_angle_and_phase(&q).unwrap();
        assert!((b - (2.0 * a.tan()).atan()).abs() < 1e-12);
    }

    #[test]
    fn zero_detuning_is_rejected() {
        let p = SystemParams { delta1: 0.0, ..SystemParams::nominal() };
        assert_eq!(effective_couplings(&p), Err(DynamicsError::ZeroDetuning { which: "delta1" }));
    }

    #[test]
    fn target_state_forms() {
        let s = FRAC_1_SQRT_2;
        let bell = target_state(PI / 4.0, 0.0);
        assert!((bell.amplitudes()[joint::DH] - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((bell.amplitudes()[joint::DPV] - C64::new(s, 0.0)).norm() < 1e-15);
        assert_eq!(target_state(0.0, 1.3), Ket::basis(4, joint::DH));
        let alpha = (1.0 / 3f64.sqrt()).acos();
        let pop = target_state(alpha, 0.2).amplitudes()[joint::DH].norm_sqr();
        assert!((pop - 1.0 / 3.0).abs() < 1e-14);
        assert!((target_state(0.7, 2.1).norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rotating_hamiltonian_structure() {
        let p = SystemParams { raman_phase: 0.4, ..SystemParams::nominal() };
        let h = hamiltonian_rotating(&p).unwrap();
        assert!(h.max_abs_diff(&h.dagger()) == 0.0);
        // on resonance all three levels are degenerate in the frame
        assert!((h[(1, 1)] - h[(2, 2)]).norm() < 1e-6);
        assert!((h[(0, 0)] - h[(1, 1)]).norm() < 1e-6);

        let flipped = hamiltonian_rotating(&SystemParams { raman_phase: 0.4 + PI, ..p.clone() }).unwrap();
        assert!((flipped[(2, 0)] + h[(2, 0)]).norm() < 1e-12 * h[(2, 0)].norm());
        assert_eq!(flipped[(1, 0)], h[(1, 0)]);
    }

    #[test]
    fn level_frequencies_consistent_with_zeeman_splitting() {
        let p = SystemParams::nominal();
        let lv = p.level_frequencies();
        assert!(((lv.omega_dp - lv.omega_d) - p.zeeman_splitting).abs() <= 1e-6 * p.zeeman_splitting.abs());
        let (w1, w2) = p.drive_frequencies();
        assert!(((w1 - w2) - (lv.omega_dp - lv.omega_d)).abs() < 1e-6 * p.zeeman_splitting.abs());
    }

    #[test]
    fn full_hamiltonian_is_hermitian() {
        let p = SystemParams { raman_phase: 1.1, ..SystemParams::nominal() };
        for k in 0..100 {
            let t = p.pulse_duration * (k as f64 * 0.6180339).fract();
            assert!(hamiltonian_full(&p, t).hermitian_deviation() < 1e-9);
        }
    }

    #[test]
    fn no_drive_keeps_ground_population() {
        let p = SystemParams { rabi1: 0.0, rabi2: 0.0, pulse_duration: 2.0 * US, ..SystemParams::nominal() };
        let traj = simulate_full(&p, 11, EvolveOptions { tol: 1e-7, ..Default::default() }).unwrap();
        assert!(traj.s_population().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let pulse = emission_pulse(&simulate_rotating(&p, 51).unwrap(), &p);
        assert!(pulse.h.iter().chain(&pulse.v).all(|&x| x == 0.0));
    }

    #[test]
    fn default_drive_generates_ninety_percent() {
        let p = SystemParams::nominal();
        let traj = simulate_rotating(&p, 2001).unwrap();
        let pulse = emission_pulse(&traj, &p);
        let gen = pulse.generation_probability();
        assert!((gen - 0.9).abs() < 0.01, "generation {gen}");
        assert!(gen <= 1.0);
        assert!(pulse.shape_distance() < 0.05);
        for rho in &traj.states {
            assert!(check_density_matrix(rho, 1e-6).is_ok());
        }
    }

    #[test]
    fn conditional_state_matches_target_throughout_pulse() {
        let p = SystemParams { raman_phase: 0.25 * PI, ..SystemParams::nominal() };
        let traj = simulate_rotating(&p, 401).unwrap();
        let psi = target_state(PI / 4.0, 0.25 * PI);
        for &t in traj.times.iter().skip(1) {
            let rho = conditional_joint_state(&traj, t, &p).unwrap();
            assert!((fidelity(&rho, &psi) - 1.0).abs() < 1e-6, "t = {t}");
        }
    }

    #[test]
    fn separable_limit() {
        let p = SystemParams { rabi2: 0.0, ..SystemParams::nominal() }.tuned_to_resonance();
        let traj = simulate_rotating(&p, 201).unwrap();
        let rho = conditional_joint_state(&traj, 20.0 * US, &p).unwrap();
        assert!(rho.max_abs_diff(&Ket::basis(4, joint::DH).projector()) < 1e-12);
    }

    #[test]
    fn no_emission_is_an_error() {
        let p = SystemParams::nominal();
        let traj = simulate_rotating(&p, 101).unwrap();
        assert!(matches!(conditional_joint_state(&traj, 0.0, &p), Err(DynamicsError::ZeroEmission { .. })));
    }

    #[test]
    fn mixing_angle_helper_hits_target() {
        for cos_alpha in [FRAC_1_SQRT_2, 1.0 / 3f64.sqrt(), 1.0 / 8f64.sqrt()] {
            let p = SystemParams::nominal().with_mixing_angle(cos_alpha.acos());
            let (alpha, _) = mixing_angle_and_phase(&p).unwrap();
            assert!((alpha.cos() - cos_alpha).abs() < 1e-9);
            let h = hamiltonian_rotating(&p).unwrap();
            assert!((h[(0, 0)] - h[(1, 1)]).norm() < 1e-3 && (h[(1, 1)] - h[(2, 2)]).norm() < 1e-3);
        }
    }
}
