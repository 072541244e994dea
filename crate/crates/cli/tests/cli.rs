use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rsrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsrf")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const EUCLID: &str = r#"{
  "name": "flat",
  "profile_spec": {"kind": "euclidean", "domain_end": 4},
  "n": 2,
  "grid": {"N": 64, "X": 4},
  "flow": {"t_end": 0.05, "cadence": 5, "bc_outer": {"kind": "linear_slope", "slope": 1.0},
           "checkpoints": {"every": 1, "burst": 1}}
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn flow_then_verify_then_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "flat.json", EUCLID);
    let out_dir = tmp.path().join("runs");
    let root = out_dir.to_str().unwrap();

    let out = rsrf(&["flow", "--config", &cfg, "--output-dir", root, "--jobs", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["termination"]["cause"], "horizon");

    let run = out_dir.join("flat");
    let out = rsrf(&["verify", run.to_str().unwrap(), "fs_evolution_residual", "phi_barrier"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("verify/phi_barrier.json").is_file());

    let out = rsrf(&["verify", run.to_str().unwrap(), "no_such_oracle"]);
    assert_eq!(code(&out), 2);

    let out = rsrf(&["resume", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn analyze_accepts_a_bare_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.json", r#"{"kind": "euclidean", "domain_end": 3, "fiber_dim": 2}"#);
    let root = tmp.path().join("out");
    let out = rsrf(&["analyze", "--config", &cfg, "--output-dir", root.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(root.join("euclidean/analysis/curvature.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[1..].iter().all(|v| *v == 0.0), "{line}");
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = EUCLID.replace("\"cadence\"", "\"cadense\"");
    let cfg = write(tmp.path(), "bad.json", &typo);
    let out = rsrf(&["flow", "--config", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("flow"));

    let out = rsrf(&["flow"]);
    assert_eq!(code(&out), 2);
    let out = rsrf(&["sweep", "--config", &write(tmp.path(), "ok.json", EUCLID)]);
    assert_eq!(code(&out), 2);
    let out = rsrf(&["bogus"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_files_exit_with_four() {
    let out = rsrf(&["flow", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn numerical_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "fast.json",
        r#"{"kind": "exp_growth", "params": {"rate": 3}, "domain_end": 2, "fiber_dim": 2}"#,
    );
    // Analyze still succeeds: a PIC1 failure is reported, not raised.
    let out = rsrf(&["analyze", "--config", &cfg, "--output-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pic1: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("exp_growth/analysis/pic1.json")).unwrap()).unwrap();
    assert_eq!(pic1["pic1"]["holds"], false);
    assert!(pic1["growth_note"].as_str().unwrap().contains("PIC1"));

    let broken = write(
        tmp.path(),
        "cap.json",
        r#"{"kind": "cap_cylinder", "params": {"base": {"kind": "cone", "params": {"slope": 0.5}}, "k": 1, "eps": 3},
            "domain_end": 8, "fiber_dim": 2}"#,
    );
    let out = rsrf(&["analyze", "--config", &broken, "--output-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    let run = tmp.path().join("empty");
    fs::create_dir_all(&run).unwrap();
    fs::write(run.join("config.json"), EUCLID).unwrap();
    let out = rsrf(&["verify", run.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "missing checkpoints are a usage error");
}
