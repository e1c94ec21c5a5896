use std::path::Path;
use std::process::{Command, Output};

fn optdesign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optdesign")).args(args).output().expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("error report on stderr");
    serde_json::from_str(line).expect("stderr ends with JSON")
}

const TINY: &str = r#"
name = "tiny"
model_degree = 2
algorithm = "adaptive"
compress = true

[generator]
kind = "chebyshev_lobatto_grid"
deg = 6
"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_check_and_compress() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let o = optdesign(&["run", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["points.csv", "design.csv", "trace.csv", "kkt.csv", "diagnostics.json", "design_compressed.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["converged"], true);
    assert!(diag["kkt"]["mass_error"].as_f64().unwrap() <= 1e-8);
    assert_eq!(diag["support_bracket"]["holds"], true);

    let design = out_dir.join("design.csv");
    let points = out_dir.join("points.csv");
    let (d, p) = (design.to_str().unwrap(), points.to_str().unwrap());
    let o = optdesign(&["check", "--design", d, "--points", p, "--model-degree", "2"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["optimal"], true);

    // The same design is far from optimal for a larger model.
    let o = optdesign(&["check", "--design", d, "--points", p, "--model-degree", "3"]);
    assert_eq!(o.status.code(), Some(1));

    let comp = dir.path().join("c.csv");
    let o = optdesign(&["compress", "--design", d, "--points", p, "--model-degree", "2", "--out", comp.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(&comp).unwrap().lines().count() - 1;
    assert!(rows <= 15);
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut designs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("out{k}"));
        let o = optdesign(&["run", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
        assert!(o.status.success());
        designs.push(std::fs::read(out_dir.join("design.csv")).unwrap());
    }
    assert_eq!(designs[0], designs[1]);
}

#[test]
fn invalid_override_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = optdesign(&["run", "--config", &cfg, "--tau0=-1"]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["error"]["kind"], "InvalidConfig");
    assert_eq!(e["error"]["exit_code"], 2);
    assert_eq!(e["schema_version"], 1);
}

#[test]
fn unknown_preset_is_invalid_config() {
    let o = optdesign(&["run", "--preset", "exp99"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "InvalidConfig");
}

#[test]
fn missing_config_file_is_io_error() {
    let o = optdesign(&["run", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"]["kind"], "Io");
}

#[test]
fn step_budget_exhaustion_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let o = optdesign(&["run", "--config", &cfg, "--nstep", "2", "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert_eq!(error_json(&o)["error"]["kind"], "NonConvergence");
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["converged"], false);
    assert_eq!(diag["steps"], 2);
}

#[test]
fn presets_are_listed() {
    let o = optdesign(&["presets"]);
    let s = String::from_utf8(o.stdout).unwrap();
    assert!(s.lines().any(|l| l == "exp1a"));
    assert_eq!(s.lines().count(), 7);
}
