use std::path::Path;
use std::process::Command;

fn srlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_srlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("experiment.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const HEISENBERG_SMOKE: &str = r#"
structure = "heisenberg"
grid = 64
endpoints = [[[0, 0, 0], [1, 0.5, 0.3]]]

[variation]
phi = ["random-3", "hat"]
lambda = [0.001, 0.01, 0.1]

[kfunc]
m = [0.5, 2.0]
cells = 16
"#;

#[test]
fn empty_endpoint_list_succeeds_with_empty_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "structure = \"martinet\"\n");
    let o = srlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bundle.json")).unwrap()).unwrap();
    assert_eq!(b["records"].as_array().unwrap().len(), 0);
    assert_eq!(b["structure"], "martinet");
}

#[test]
fn smoke_pipeline_has_every_stage_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), HEISENBERG_SMOKE);
    let mut bundles = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = srlab(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
        bundles.push(std::fs::read(out.join("bundle.json")).unwrap());
        for f in ["verdicts.csv", "trajectory_0.csv", "moduli_0.csv", "kfunc_0.csv", "fourier_0.csv"] {
            assert!(out.join(f).exists(), "missing {}", f);
        }
    }
    assert_eq!(bundles[0], bundles[1]);
    let b: serde_json::Value = serde_json::from_slice(&bundles[0]).unwrap();
    let names: Vec<&str> = b["records"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    for stage in ["solve/", "regularity/", "variation/", "kfunc/", "fourier/"] {
        assert!(names.iter().any(|n| n.contains(stage)), "no {} record", stage);
    }
    assert!(b["records"].as_array().unwrap().iter().all(|r| !r["anchor"].as_str().unwrap().is_empty()));
    assert_eq!(b["provenance"]["seed"], 11);
    assert_eq!(b["provenance"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(srlab(&["verify-all", "medium"]).status.code(), Some(2));
    assert_eq!(srlab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(srlab(&["solve", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "structure = \"heisenberg\"\nendpoints = [[[0, 0], [1, 1]]]\n");
    assert_eq!(srlab(&["solve", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(srlab(&["solve", "--grid", "10"]).status.code(), Some(2));
}

#[test]
fn failing_check_exits_1() {
    // a nonconstant control has L2 modulus exponent at most 1
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "structure = \"heisenberg\"\nendpoints = [[[0, 0, 0], [1, 0.5, 0.3]]]\n[regularity]\nmin_exponent = 2.0\n",
    );
    let out = dir.path().join("o");
    let o = srlab(&["regularity", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn ballbox_subcommand_reports_exponents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "structure = \"heisenberg\"\n[ballbox]\ndirections = [[0, 0, 1], [1, 0, 0]]\nradii = [0.2, 0.1, 0.05]\n",
    );
    let out = dir.path().join("o");
    let o = srlab(&["ballbox", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bundle.json")).unwrap()).unwrap();
    let m: Vec<f64> = b["records"].as_array().unwrap().iter().map(|r| r["measured"].as_f64().unwrap()).collect();
    assert!((m[0] - 0.5).abs() < 0.05 && (m[1] - 1.0).abs() < 0.05, "{:?}", m);
}
