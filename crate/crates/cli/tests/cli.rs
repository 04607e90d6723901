use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use ionphoton::analysis::fidelity;
use ionphoton::dynamics::target_state;
use ionphoton::linalg::Operator;
use ionphoton::measurement::{BasisSetting, CountTable};
use ionphoton::tomography::expected_counts;

fn ionphoton(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ionphoton")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let file = dir.join("run.ini");
    std::fs::write(&file, text).unwrap();
    file.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_output_feeds_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[noise]\npreset = ideal\n[run]\nsequences_per_setting = 1500\nseed = 21\n");
    let sim = dir.path().join("sim");
    let o = ionphoton(&["--config", &cfg, "--out", path(&sim), "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let rec = dir.path().join("rec");
    let o = ionphoton(&["--out", path(&rec), "reconstruct", path(&sim.join("counts.csv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rho: Operator = std::fs::read_to_string(rec.join("rho.txt")).unwrap().parse().unwrap();
    assert!((rho.trace().re - 1.0).abs() < 1e-9);
    assert!(fidelity(&rho, &target_state(PI / 4.0, 0.0)).unwrap() > 0.97);
    assert!(std::fs::read_to_string(rec.join("tomography.json")).unwrap().contains("\"converged\": true"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nsequences_per_setting = 3000\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ionphoton(&["--config", &cfg, "--seed", "77", "--out", path(out), "simulate"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["events.csv", "counts.csv", "manifest.ini", "config.ini"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let manifest = std::fs::read_to_string(a.join("manifest.ini")).unwrap();
    assert!(manifest.contains("seed = 77"));
    assert!(manifest.contains("config_sha256 = "));

    let c = dir.path().join("c");
    ionphoton(&["--config", &cfg, "--seed", "78", "--out", path(&c), "simulate"]);
    assert_ne!(std::fs::read(a.join("events.csv")).unwrap(), std::fs::read(c.join("events.csv")).unwrap());
}

#[test]
fn zero_sequences_give_empty_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nsequences_per_setting = 0\nseed = 1\n");
    let out = dir.path().join("out");
    let o = ionphoton(&["--config", &cfg, "--out", path(&out), "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("events.csv")).unwrap().lines().count(), 1);
    let table: CountTable = std::fs::read_to_string(out.join("counts.csv")).unwrap().parse().unwrap();
    assert_eq!(table.detected(), 0);
}

#[test]
fn exact_bell_counts_reconstruct_bell_state() {
    let dir = tempfile::tempdir().unwrap();
    let bell = target_state(PI / 4.0, 0.0);
    let counts = expected_counts(&bell.projector(), &BasisSetting::all(), 100_000);
    let file = dir.path().join("bell.csv");
    std::fs::write(&file, counts.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = ionphoton(&["--out", path(&out), "reconstruct", path(&file)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rho: Operator = std::fs::read_to_string(out.join("rho.txt")).unwrap().parse().unwrap();
    assert!(fidelity(&rho, &bell).unwrap() > 0.999);
}

#[test]
fn truncated_count_file_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let counts = expected_counts(&target_state(PI / 4.0, 0.0).projector(), &BasisSetting::all(), 1000);
    let text = counts.to_string();
    let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
    let file = dir.path().join("cut.csv");
    std::fs::write(&file, cut).unwrap();
    let o = ionphoton(&["--out", path(&dir.path().join("o")), "reconstruct", path(&file)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn missing_settings_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let only_z: Vec<BasisSetting> = BasisSetting::all().into_iter().filter(|s| s.ion_axis.label() == "z").collect();
    let counts = expected_counts(&target_state(PI / 4.0, 0.0).projector(), &only_z, 1000);
    let file = dir.path().join("z.csv");
    std::fs::write(&file, counts.to_string()).unwrap();
    let o = ionphoton(&["--out", path(&dir.path().join("o")), "reconstruct", path(&file)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("x/HV"), "{}", stderr(&o));
}

#[test]
fn single_phase_fit_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sweep]\nphases_pi = 0.25\n[run]\nseed = 3\n");
    let o = ionphoton(&["--config", &cfg, "--out", path(&dir.path().join("o")), "sweep-phase"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 2 distinct phases"));
}

#[test]
fn usage_and_config_errors() {
    assert_eq!(ionphoton(&["no-such-command"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let o = ionphoton(&["--out", path(&dir.path().join("o")), "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"));

    let cfg = write_config(dir.path(), "[noise]\ndark_rate_hz = -3\n");
    let o = ionphoton(&["--config", &cfg, "budget"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[noise] dark_rate"), "{}", stderr(&o));

    let o = ionphoton(&["--config", path(&dir.path().join("absent.ini")), "budget"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn budget_prints_labeled_table() {
    let o = ionphoton(&["budget"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for label in ["mirror output coupling", "generation probability", "detection per sequence", "detected events per second"] {
        assert!(text.contains(label), "{label} missing from\n{text}");
    }
}

#[test]
fn pulse_shape_writes_two_column_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pulse");
    let o = ionphoton(&["--out", path(&out), "pulse-shape"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for file in ["pulse_h.csv", "pulse_v.csv"] {
        let text = std::fs::read_to_string(out.join(file)).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with('t')).collect();
        assert!(rows.len() > 100);
        assert!(rows.iter().all(|r| r.split(',').count() == 2), "{file}");
    }
}

#[test]
fn noiseless_phase_sweep_fits_unit_contrast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[noise]\npreset = ideal\n[run]\nsequences_per_setting = 600\nseed = 8\nresamples = 100\npoints = 801\n[sweep]\nphases_pi = 0, 0.5, 1, 1.5\n",
    );
    let out = dir.path().join("sweep");
    let o = ionphoton(&["--config", &cfg, "--out", path(&out), "sweep-phase"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = std::fs::read_to_string(out.join("fit.txt")).unwrap();
    let contrast: f64 = fit.lines().find_map(|l| l.strip_prefix("contrast = ")).unwrap().parse().unwrap();
    assert!(contrast > 0.97, "{fit}");
    let table = std::fs::read_to_string(out.join("sweep_phase.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}
