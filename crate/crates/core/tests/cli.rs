//! Command-line behaviour: exit codes, output files and shape-file round trips.

use std::path::{Path, PathBuf};
use std::process::Command;

use bridgemark::cli::io::{read_shapes, write_shapes, Shape};
use bridgemark::geometry::LandmarkConfig;

fn bridgemark(mode: &str, config: &Path, out: &Path, seed: Option<u64>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bridgemark"));
    cmd.arg(mode).arg("--config").arg(config).arg("--out").arg(out);
    if let Some(s) = seed {
        cmd.arg("--seed").arg(s.to_string());
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Every data row has as many cells as the header.
fn assert_rectangular(path: &Path) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let width = lines.next().unwrap().split(',').count();
    let mut rows = 0;
    for line in lines {
        assert_eq!(line.split(',').count(), width, "{}: {line}", path.display());
        rows += 1;
    }
    rows
}

#[test]
fn configuration_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases = [
        ("missing.json", None),
        ("syntax.json", Some("{ not json")),
        ("unknown.json", Some(r#"{"seed": 1, "colour": "blue"}"#)),
        ("negative_h.json", Some(r#"{"seed": 1, "h": -0.1, "initial": {"kind": "circle", "n": 4, "r": 1.0}}"#)),
        ("wrong_mode.json", Some(r#"{"mode": "template", "seed": 1, "initial": {"kind": "circle", "n": 4, "r": 1.0}}"#)),
        ("no_seed.json", Some(r#"{"initial": {"kind": "circle", "n": 4, "r": 1.0}}"#)),
        ("bad_momenta.json", Some(r#"{"seed": 1, "momenta": [1.0], "initial": {"kind": "circle", "n": 4, "r": 1.0}}"#)),
    ];
    for (name, text) in cases {
        let path = match text {
            Some(t) => write(d, name, t),
            None => d.join(name),
        };
        let out = bridgemark("simulate", &path, &d.join("out"), None);
        assert_eq!(out.status.code(), Some(1), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let match_cfg = write(d, "no_target.json", r#"{"seed": 1, "initial": {"kind": "points", "d": 1, "values": [0.0]}}"#);
    assert_eq!(bridgemark("match", &match_cfg, &d.join("out"), None).status.code(), Some(1));
}

#[test]
fn diverging_simulation_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "blowup.json",
        r#"{"seed": 3, "h": 0.01, "momenta": [1e200, 0.0, -1e200, 0.0],
            "initial": {"kind": "points", "d": 2, "values": [0.0, 0.0, 0.1, 0.0]}}"#,
    );
    let out = bridgemark("simulate", &cfg, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulation_writes_a_readable_shape_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.json",
        r#"{"mode": "simulate", "gamma": 0.2, "eps": 0.01, "h": 0.02, "trajectories": 3,
            "initial": {"kind": "circle", "n": 5, "r": 1.0}}"#,
    );
    let out_dir = dir.path().join("sim");
    let out = bridgemark("simulate", &cfg, &out_dir, Some(9));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = std::fs::read_to_string(out_dir.join("shapes.csv")).unwrap();
    assert!(header.starts_with("shape,landmark,coord,value\n"));
    assert_eq!(assert_rectangular(&out_dir.join("shapes.csv")), 3 * 5 * 2);
    let shapes = read_shapes(&out_dir.join("shapes.csv")).unwrap();
    assert_eq!(shapes.iter().map(|s| s.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(shapes.iter().all(|s| s.config.n() == 5 && s.config.d() == 2));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 9);
}

#[test]
fn shape_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let shapes = vec![
        Shape { id: 4, config: LandmarkConfig::new(2, vec![0.1, -1.0 / 3.0, 2.5e-17, 1e10]).unwrap() },
        Shape { id: 7, config: LandmarkConfig::new(2, vec![std::f64::consts::PI, 0.0, -0.0, 1.0]).unwrap() },
    ];
    write_shapes(&path, &shapes).unwrap();
    let back = read_shapes(&path).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in shapes.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.config.as_slice(), b.config.as_slice());
    }
}

#[test]
fn matching_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "match.json",
        r#"{"mode": "match", "seed": 2, "gamma": 0.5, "eps": 0.02, "h": 0.05, "iterations": 6, "save_every": 2,
            "initial": {"kind": "points", "d": 2, "values": [0.0, 0.0, 1.0, 0.0]},
            "target": {"kind": "points", "d": 2, "values": [0.1, 0.1, 1.1, 0.2]}}"#,
    );
    let out_dir = dir.path().join("m");
    let out = bridgemark("match", &cfg, &out_dir, None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["bridges.csv", "momenta.csv", "theta.csv", "acceptance.csv"] {
        assert!(assert_rectangular(&out_dir.join(f)) > 0, "{f} is empty");
    }
    assert!(out_dir.join("run_meta.json").is_file());
}

#[test]
fn single_iteration_template_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = [
        Shape { id: 0, config: LandmarkConfig::new(2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap() },
        Shape { id: 1, config: LandmarkConfig::new(2, vec![1.1, 0.1, 0.0, 0.9, -1.0, -0.1]).unwrap() },
    ];
    write_shapes(&dir.path().join("obs.csv"), &shapes).unwrap();
    let cfg = write(
        dir.path(),
        "template.json",
        r#"{"mode": "template", "seed": 5, "gamma": 0.3, "eps": 0.05, "h": 0.05, "iterations": 1, "save_every": 1,
            "shapes": {"kind": "file", "path": "obs.csv"}}"#,
    );
    let out_dir = dir.path().join("t");
    let out = bridgemark("template", &cfg, &out_dir, None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> =
        std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["acceptance.csv", "run_meta.json", "template.csv", "theta.csv"]);
    for f in ["template.csv", "theta.csv", "acceptance.csv"] {
        assert_rectangular(&out_dir.join(f));
    }
    let tmpl = std::fs::read_to_string(out_dir.join("template.csv")).unwrap();
    assert!(tmpl.starts_with("iter,landmark,coord,value\n"));
}
