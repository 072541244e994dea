use std::fs;
use std::path::Path;

use super::*;
use crate::flow::{OuterBc, Termination};
use crate::Error;

fn cone_config(name: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
  "name": "{name}",
  "profile_spec": {{"kind": "cone", "params": {{"slope": 0.5}}, "domain_end": 4}},
  "n": 2,
  "grid": {{"N": 64, "X": 4}},
  "flow": {{"t_end": 0.002, "bc_outer": {{"kind": "linear_slope", "slope": 0.5}}, "cadence": 5,
            "checkpoints": {{"every": 4, "burst": 3}}}},
  "oracles": [{{"name": "fs_evolution_residual"}}]
}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn euclid_config(name: &str) -> ExperimentConfig {
    let mut c = cone_config(name);
    c.profile_spec = crate::ProfileSpec::from_json(r#"{"kind": "euclidean", "domain_end": 4}"#).unwrap();
    c.flow.bc_outer = OuterBc::LinearSlope { slope: 1.0 };
    c
}

#[test]
fn configs_round_trip() {
    let c = cone_config("rt");
    let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_json(), c.to_json());
    assert_eq!(back.hash(), c.hash());
    assert_eq!(c.hash().len(), 64);
}

fn with_typo_in_params(text: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["profile_spec"]["params"]["slop"] = 1.into();
    serde_json::to_string(&v).unwrap()
}

#[test]
fn unknown_keys_are_reported_with_their_path() {
    let text = cone_config("x").to_json();
    let cases = [
        (text.replace("\"cadence\"", "\"cadense\""), "flow"),
        (with_typo_in_params(&text), "profile_spec.params"),
        (text.replace("\"name\": \"x\"", "\"name\": \"x\", \"seed\": 3"), "seed"),
    ];
    for (bad, want) in cases {
        assert_ne!(bad, text, "replacement did not apply for {want}");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Parse { path, .. }) => assert!(path.starts_with(want), "path {path}, wanted {want}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}

#[test]
fn sweep_members_edit_the_right_parameter() {
    let mut c = cone_config("fam");
    c.profile_spec = crate::ProfileSpec::from_json(
        r#"{"kind": "smooth_cone", "params": {"base": {"kind": "cone", "params": {"slope": 0.5}},
            "k": 10, "v": 0.5, "L": 1.0}, "domain_end": 4}"#,
    )
    .unwrap();
    let m = c.member(SweepParameter::Slope, 0.25).unwrap();
    assert_eq!(m.name, "fam_v=0.25");
    assert_eq!(m.profile_spec.params["v"], 0.25);
    assert_eq!(m.profile_spec.params["base"]["params"]["slope"], 0.25);
    assert_eq!(m.flow.bc_outer, OuterBc::LinearSlope { slope: 0.25 });
    assert_eq!(c.member(SweepParameter::K, 20.0).unwrap().profile_spec.params["k"], 20.0);
    assert_eq!(c.member(SweepParameter::Cells, 128.0).unwrap().grid.cells, 128);
    assert!(matches!(c.member(SweepParameter::Eps, 0.5), Err(Error::Configuration(_))));
    assert!(matches!(c.member(SweepParameter::Cells, 100.5), Err(Error::Configuration(_))));
    c.sweep = Some(SweepConfig { parameter: SweepParameter::K, values: vec![10.0, 20.0] });
    assert!(matches!(c.validate(), Err(Error::Configuration(_))));
}

#[test]
fn tail_guard_clamps_cylinder_caps() {
    let mut c = cone_config("cap");
    c.profile_spec = crate::ProfileSpec::from_json(
        r#"{"kind": "cap_cylinder", "params": {"base": {"kind": "cone", "params": {"slope": 0.5}}, "k": 5, "eps": 1},
            "domain_end": 8}"#,
    )
    .unwrap();
    c.flow.t_end = 1.0;
    assert_eq!(c.horizon(), 1.0);
    c.flow.tail_guard = true;
    assert!((c.horizon() - 0.4 * 0.25 / 2.0).abs() < 1e-15);
}

#[test]
fn flow_writes_a_valid_manifest_and_registers() {
    let root = tempfile::tempdir().unwrap();
    let m = run_flow(&euclid_config("flat"), root.path()).unwrap();
    let dir = root.path().join("flat");
    assert_eq!(m.termination, Some(Termination::Horizon));
    m.validate(&dir).unwrap();
    assert!(m.artifacts.iter().any(|a| a == "series.csv"));
    assert!(m.artifacts.iter().any(|a| a.starts_with("checkpoints/ckpt_")));
    let reloaded = RunManifest::load(&dir).unwrap();
    assert_eq!(reloaded, m);
    let rows = read_series(&dir.join("series.csv")).unwrap();
    assert!(rows.iter().all(|r| r.sup_rm < 1e-8));
    let registry = fs::read_to_string(root.path().join("registry.jsonl")).unwrap();
    assert_eq!(registry.lines().count(), 1);
    let entry: RegistryEntry = serde_json::from_str(registry.lines().next().unwrap()).unwrap();
    assert_eq!(entry.outcome, "horizon");
    assert_eq!(entry.config_hash, m.config_hash);
}

#[test]
fn tampered_configs_fail_validation() {
    let root = tempfile::tempdir().unwrap();
    let m = run_flow(&euclid_config("tamper"), root.path()).unwrap();
    let dir = root.path().join("tamper");
    let path = dir.join("config.json");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push(' ');
    fs::write(&path, text).unwrap();
    assert!(matches!(m.validate(&dir), Err(Error::Configuration(_))));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = cone_config("det");
    run_flow(&c, a.path()).unwrap();
    run_flow(&c, b.path()).unwrap();
    let read = |p: &Path| fs::read(p.join("det").join("series.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn resumed_runs_match_uninterrupted_ones() {
    let root = tempfile::tempdir().unwrap();
    let full = cone_config("full");
    run_flow(&full, root.path()).unwrap();
    let mut cut = cone_config("cut");
    cut.flow.max_steps = Some(63);
    let m = run_flow(&cut, root.path()).unwrap();
    assert_eq!(m.termination, Some(Termination::StepLimit { step: 63 }));
    let dir = root.path().join("cut");
    let done = resume(&dir).unwrap();
    assert_eq!(done.termination, Some(Termination::Horizon));
    done.validate(&dir).unwrap();
    let a = read_series(&root.path().join("full").join("series.csv")).unwrap();
    let b = read_series(&dir.join("series.csv")).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in [(x.t, y.t), (x.sup_rm, y.sup_rm), (x.min_fs, y.min_fs), (x.min_f, y.min_f)] {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1e-300), "{p} vs {q}");
        }
    }
}

#[test]
fn verify_needs_checkpoints() {
    let root = tempfile::tempdir().unwrap();
    run_flow(&euclid_config("v"), root.path()).unwrap();
    let dir = root.path().join("v");
    fs::remove_dir_all(dir.join("checkpoints")).unwrap();
    assert!(matches!(verify(&dir, &[], None), Err(Error::Usage(_))));
    assert!(matches!(resume(&dir), Err(Error::Usage(_))));
}

#[test]
fn verify_writes_one_report_per_oracle() {
    let root = tempfile::tempdir().unwrap();
    let mut c = euclid_config("ok");
    c.flow.checkpoints.every = 1;
    c.flow.checkpoints.burst = 1;
    c.flow.t_end = 0.05;
    run_flow(&c, root.path()).unwrap();
    let dir = root.path().join("ok");
    let out = verify(&dir, &[OracleName::FsEvolutionResidual, OracleName::DistanceDistortion], None).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|o| !o.failed), "{out:?}");
    assert!(dir.join("verify/fs_evolution_residual.json").is_file());
    RunManifest::load(&dir).unwrap().validate(&dir).unwrap();
}

#[test]
fn analyze_reports_the_cone() {
    let root = tempfile::tempdir().unwrap();
    let spec = crate::ProfileSpec::from_json(r#"{"kind": "cone", "params": {"slope": 0.5}, "domain_end": 4}"#).unwrap();
    let m = analyze(&spec, 2, "cone", root.path()).unwrap();
    let dir = root.path().join("cone").join("analysis");
    m.validate(&dir).unwrap();
    let s: AnalyzeSummary = serde_json::from_value(m.summary).unwrap();
    assert!(s.pic1_holds);
    assert_eq!(s.growth_holds, Some(true));
    assert!((s.effective_delta - 0.5).abs() < 1e-12);
    assert!((s.volume_lower_bound.unwrap() - 0.014377).abs() < 1e-5);
    let csv = fs::read_to_string(dir.join("curvature.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2001);
}

#[test]
fn exit_codes_follow_the_error_class() {
    assert_eq!(exit_code(&Error::Usage("x".into())), 2);
    assert_eq!(exit_code(&Error::Parse { path: ".".into(), message: "x".into() }), 2);
    assert_eq!(exit_code(&Error::Domain("x".into())), 3);
    assert_eq!(exit_code(&Error::Precondition("x".into())), 3);
    assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 4);
}

#[test]
fn concurrent_registry_appends_stay_whole() {
    let root = tempfile::tempdir().unwrap();
    let entry = |i: usize| RegistryEntry {
        name: format!("r{i}"),
        kind: RunKind::Flow,
        dir: format!("r{i}").into(),
        config_hash: "0".repeat(64),
        finished_unix: 0.0,
        outcome: "horizon".into(),
    };
    std::thread::scope(|s| {
        for i in 0..8 {
            let path = root.path();
            s.spawn(move || append_registry(path, &entry(i)).unwrap());
        }
    });
    let text = fs::read_to_string(root.path().join("registry.jsonl")).unwrap();
    let mut names: Vec<String> = text.lines().map(|l| serde_json::from_str::<RegistryEntry>(l).unwrap().name).collect();
    names.sort();
    assert_eq!(names.len(), 8);
}

#[test]
fn blowups_leave_a_dump() {
    let root = tempfile::tempdir().unwrap();
    let c = euclid_config("boom");
    run_flow(&c, root.path()).unwrap();
    let dir = root.path().join("boom");
    let state = crate::flow::load_checkpoint(&dir.join("checkpoints/ckpt_0000000000.json")).unwrap();
    let out = crate::flow::RunOutput {
        state,
        records: Vec::new(),
        snapshots: Vec::new(),
        checkpoints: Vec::new(),
        termination: Termination::Blowup { t: 0.0, reason: "synthetic".into() },
        regrids: 0,
    };
    let begun = RunManifest::load(&dir).unwrap();
    let m = ops::finish_flow(root.path(), &dir, begun, Ok(out)).unwrap();
    assert!(m.artifacts.iter().any(|a| a == "dump.json"));
    m.validate(&dir).unwrap();
    let dumped = crate::flow::load_checkpoint(&dir.join("dump.json")).unwrap();
    assert_eq!(dumped.t, 0.0);
}
