use std::f64::consts::{PI, TAU};

use ionphoton::analysis::{coherence, coherence_phase, concurrence, fidelity, sinusoid_fit};
use ionphoton::dynamics::{
    joint, mixing_angle_and_phase, simulate_full, simulate_rotating, target_state, EvolveOptions, SystemParams,
    LAB_RAMAN_MISMATCH_KHZ, US,
};
use ionphoton::measurement::{
    counts_in_window, parse_event_log, run_experiment, BasisSetting, CountTable, NoiseModel, Outcome, PhotonSource,
};
use ionphoton::tomography::{mle_reconstruct, povm_element, MleOptions};
use proptest::prelude::*;

#[test]
fn resonant_coherence_phase_is_constant() {
    let p = SystemParams { raman_phase: 0.4, ..SystemParams::nominal() };
    let source = PhotonSource::new(&p, 801).unwrap();
    let phases: Vec<f64> = (1..40).map(|k| coherence_phase(&source.joint_state(k as f64 * US).unwrap()).unwrap()).collect();
    let spread = phases.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - phases.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    assert!(spread < 1e-3, "phase spread {spread}");
}

#[test]
fn final_populations_agree_with_full_model() {
    // |Δ|/max(Ω, g) ≈ 400/7 at the defaults; the check uses Δ = 2π × 1 GHz
    // so that the ratio exceeds 100.
    let mut p = SystemParams::nominal();
    p.cavity_detuning *= 2.5;
    let p = p.with_mixing_angle(PI / 4.0);
    let ratio = p.delta1.abs() / p.rabi1.max(p.rabi2).max(p.g);
    assert!(ratio >= 100.0, "ratio {ratio}");
    let rotating = simulate_rotating(&p, 41).unwrap();
    let full = simulate_full(&p, 41, EvolveOptions { tol: 1e-5, max_refinements: 12, ..EvolveOptions::default() }).unwrap();
    for (name, a, b) in [
        ("D", full.d_population(), rotating.d_population()),
        ("D'", full.dp_population(), rotating.dp_population()),
    ] {
        let (fa, fb) = (a.last().unwrap(), b.last().unwrap());
        assert!((fa - fb).abs() < 0.05 * fb, "{name}: full {fa}, rotating {fb}");
    }
}

#[test]
fn born_frequencies_match_averaged_state() {
    let source = PhotonSource::new(&SystemParams { raman_phase: 1.0, ..SystemParams::nominal() }, 801).unwrap();
    let noise = NoiseModel::ideal();
    let rho = source.average_joint_state(noise.detection_window).unwrap();
    let exp = run_experiment(&source, &noise, &BasisSetting::all(), 20_000, 3).unwrap();
    for (setting, counts) in exp.counts.iter() {
        let n = counts.detected() as f64;
        for outcome in Outcome::ALL {
            let expected = rho.expectation(&povm_element(setting, outcome));
            let observed = counts.get(outcome) as f64 / n;
            assert!((observed - expected).abs() < 5.0 / n.sqrt(), "{setting} {}: {observed} vs {expected}", outcome.label());
        }
    }
}

#[test]
fn event_log_and_count_text_compose() {
    let source = PhotonSource::new(&SystemParams::nominal(), 401).unwrap();
    let exp = run_experiment(&source, &NoiseModel::laboratory(), &BasisSetting::all(), 4000, 12).unwrap();
    let events = parse_event_log(&exp.event_log()).unwrap();
    assert_eq!(events.len(), exp.events.len());
    for (a, b) in events.iter().zip(&exp.events) {
        assert_eq!((a.sequence_index, a.setting, a.detector, a.dark, a.ion_outcome), (b.sequence_index, b.setting, b.detector, b.dark, b.ion_outcome));
        assert!((a.detection_time - b.detection_time).abs() < 1e-12);
    }
    let rebuilt = counts_in_window(&events, 0.0, f64::INFINITY);
    for (setting, counts) in exp.counts.iter() {
        assert_eq!(rebuilt.get(setting).map(|c| c.joint), Some(counts.joint));
    }
    let reparsed: CountTable = exp.counts.to_string().parse().unwrap();
    assert_eq!(reparsed, exp.counts);
}

#[test]
fn fidelity_above_half_implies_entanglement() {
    let configs = [
        (NoiseModel::laboratory(), 0.0),
        (NoiseModel { dark_rate: 2000.0, ..NoiseModel::laboratory() }, 0.0),
        (NoiseModel { readout_error: 0.08, ..NoiseModel::ideal() }, 0.0),
        (NoiseModel::ideal(), TAU * 20e3),
        (NoiseModel { dark_rate: 20_000.0, ..NoiseModel::ideal() }, 0.0),
    ];
    let target = target_state(PI / 4.0, 0.0);
    let mut above_half = 0;
    for (k, (noise, mismatch)) in configs.iter().enumerate() {
        let p = SystemParams::nominal().with_raman_mismatch(*mismatch);
        let source = PhotonSource::new(&p, 401).unwrap();
        let n = if noise.exit_efficiency < 1.0 { 20_000 } else { 800 };
        let exp = run_experiment(&source, noise, &BasisSetting::all(), n, 30 + k as u64).unwrap();
        let rho = mle_reconstruct(&exp.counts, MleOptions::default()).unwrap().rho_hat;
        let f = fidelity(&rho, &target).unwrap();
        if f > 0.5 {
            above_half += 1;
            assert!(concurrence(&rho) > 0.0, "config {k}: F = {f}, C = {}", concurrence(&rho));
        }
    }
    assert!(above_half >= 3);
}

#[test]
fn swap_compensation_cancels_path_imbalance() {
    let source = PhotonSource::new(&SystemParams::nominal(), 401).unwrap();
    let noise = NoiseModel { path_imbalance: 0.5, ..NoiseModel::ideal() };
    let exp = run_experiment(&source, &noise, &BasisSetting::all(), 20_000, 17).unwrap();
    let port_totals = |c: &ionphoton::measurement::SettingCounts| (c.joint[0] + c.joint[1], c.joint[2] + c.joint[3]);
    let summed = exp.counts.compensated();
    for setting in BasisSetting::unswapped() {
        let (raw0, raw1) = port_totals(exp.counts.get(setting).unwrap());
        let raw_sigma = ((raw0 + raw1) as f64).sqrt();
        assert!((raw0 as f64 - raw1 as f64) > 4.0 * raw_sigma, "{setting}: raw {raw0} vs {raw1}");
        let (n0, n1) = port_totals(summed.get(setting).unwrap());
        let sigma = ((n0 + n1) as f64).sqrt();
        assert!((n0 as f64 - n1 as f64).abs() < 4.0 * sigma, "{setting}: summed {n0} vs {n1}");
    }
}

#[test]
fn lab_budget_detects_near_six_percent_and_converges() {
    let source = PhotonSource::new(&SystemParams::nominal(), 801).unwrap();
    let exp = run_experiment(&source, &NoiseModel::laboratory(), &BasisSetting::all(), 40_000, 2).unwrap();
    let fraction = exp.counts.detected() as f64 / exp.counts.sequences() as f64;
    assert!((fraction - 0.057).abs() < 0.003, "{fraction}");
    assert!(exp.counts.detected() > 38_000);
    let result = mle_reconstruct(&exp.counts, MleOptions::default()).unwrap();
    assert!(result.converged && result.iterations <= 100_000);
}

#[test]
fn lab_noise_phase_sweep_contrast() {
    let params = SystemParams::nominal().with_raman_mismatch(TAU * LAB_RAMAN_MISMATCH_KHZ * 1e3);
    let noise = NoiseModel::laboratory();
    let phases: Vec<f64> = (0..8).map(|k| k as f64 * PI / 4.0).collect();
    let (mut re, mut im) = (Vec::new(), Vec::new());
    for (k, &phi) in phases.iter().enumerate() {
        let source = PhotonSource::with_calibrated_phase(&params, phi, noise.detection_window, 801).unwrap();
        let exp = run_experiment(&source, &noise, &BasisSetting::all(), 20_000, 60 + k as u64).unwrap();
        let c = coherence(&mle_reconstruct(&exp.counts, MleOptions::default()).unwrap().rho_hat);
        re.push(c.re);
        im.push(c.im);
    }
    let fit = sinusoid_fit(&phases, &re, &im).unwrap();
    assert!((0.93..=0.98).contains(&fit.contrast), "contrast {}", fit.contrast);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn common_drive_scaling_keeps_population_ratio(factor in 0.3f64..3.0, alpha in 0.2f64..1.3) {
        let base = SystemParams::nominal().with_mixing_angle(alpha);
        let scaled = SystemParams { rabi1: factor * base.rabi1, rabi2: factor * base.rabi2, ..base.clone() };
        let (a0, _) = mixing_angle_and_phase(&base).unwrap();
        let (a1, _) = mixing_angle_and_phase(&scaled).unwrap();
        prop_assert!((a0 - a1).abs() < 1e-12);
        let ratio = |p: &SystemParams| {
            let traj = simulate_rotating(p, 101).unwrap();
            let rho = ionphoton::dynamics::conditional_joint_state(&traj, 5.0 * US, p).unwrap();
            rho[(joint::DH, joint::DH)].re / rho[(joint::DPV, joint::DPV)].re
        };
        let (r0, r1) = (ratio(&base), ratio(&scaled));
        prop_assert!((r0 - r1).abs() < 1e-6 * r0, "{} vs {}", r0, r1);
    }
}
