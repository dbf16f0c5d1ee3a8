use std::path::Path;
use std::process::{Command, Output};

use ferroflow_core::config::{parse_config, Preset, RunConfig, Scale, TimeConfig};

fn ferroflow(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ferroflow"));
    cmd.args(args).env_remove("FERROFLOW_OUTPUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn small_relaxation() -> RunConfig {
    let mut cfg = Preset::Relaxation.config(Scale::Desk);
    cfg.name = "small".into();
    cfg.mesh.nx = 4;
    cfg.mesh.ny = 4;
    cfg.time = TimeConfig { tau: Some(0.02), steps: Some(3), t_final: None };
    cfg.output.every = 1;
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path.display().to_string()
}

#[test]
fn printed_presets_parse_back() {
    for name in Preset::NAMES {
        for scale in ["desk", "full"] {
            let out = ferroflow(&["preset", name, "--scale", scale, "--print"], &[]);
            assert!(out.status.success(), "{name} {scale}");
            let text = String::from_utf8(out.stdout).unwrap();
            let cfg = parse_config(&text).unwrap();
            assert_eq!(cfg, name.parse::<Preset>().unwrap().config(scale.parse().unwrap()));
        }
    }
}

#[test]
fn small_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_relaxation());
    let out_dir = dir.path().join("out");
    let out = ferroflow(&["run", &config, "--out", out_dir.to_str().unwrap()], &[]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("[pass] energy law"), "{stdout}");
    for f in ["energy.csv", "observables.csv"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let energy = std::fs::read_to_string(out_dir.join("energy.csv")).unwrap();
    assert_eq!(energy.lines().count(), 4, "header plus one row per step");
    let snapshots = std::fs::read_dir(&out_dir).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "vtk")
    });
    assert!(snapshots.count() >= 3);
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_relaxation());
    let env_dir = dir.path().join("from_env");
    let out = ferroflow(&["run", &config], &[("FERROFLOW_OUTPUT_DIR", &env_dir)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(env_dir.join("energy.csv").is_file());
}

#[test]
fn failing_monitor_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_relaxation();
    // no dipoles, so the spin stays at zero and the monitor cannot pass
    cfg.field.dipoles.clear();
    cfg.monitors.positive_mean_spin = Some([0.0, 1.0]);
    let config = write_config(dir.path(), &cfg);
    let out = ferroflow(&["run", &config, "--out", dir.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] positive mean spin"));
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[mesh]\nnx = 0\n").unwrap();
    let out = ferroflow(&["run", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let missing = ferroflow(&["run", dir.path().join("nope.toml").to_str().unwrap()], &[]);
    assert_eq!(missing.status.code(), Some(2));

    let unknown = ferroflow(&["preset", "no_such_preset"], &[]);
    assert_eq!(unknown.status.code(), Some(2));
}
