use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{ExperimentConfig, OracleConfig, OracleName};
use super::record::{append_registry, read_series, write_atomic, RegistryEntry, RunKind, RunManifest};
use crate::curvature::{curvature_field, growth_bound_check, pic1_check, write_curvature_csv};
use crate::flow::{
    distance_distortion_check, evolve, init_state_with, load_checkpoint, write_checkpoint, DiagnosticsRecord,
    EvolveFailure, FlowOptions, GridState, RunOutput, Termination,
};
use crate::geometry::{effective_delta, volume_ratio_lower_bound};
use crate::oracles::{
    fs_evolution_residual, lambda_fit, phi_barrier_check, ricci_pinch_residual, summarize_residuals,
    supersolution_check, FamilyRun, LambdaFitReport, OracleOptions, Verdict,
};
use crate::par::{self, Exec};
use crate::profiles::ProfileSpec;
use crate::{Error, Result};

const CURVATURE_POINTS: usize = 2000;
const SCAN_DENSITY: f64 = 400.0;
const PIC1_TOLERANCE: f64 = 1e-10;

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    text.into_bytes()
}

/// Files under `dir`, relative to it, skipping the manifest itself.
fn list_artifacts(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let here = dir.join(&rel);
        for entry in fs::read_dir(&here).map_err(|e| Error::io(&here, e))? {
            let entry = entry.map_err(|e| Error::io(&here, e))?;
            let path = rel.join(entry.file_name());
            let kind = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
            if kind.is_dir() {
                stack.push(path);
            } else if path != Path::new("manifest.json") && path.extension().is_none_or(|x| x != "tmp") {
                out.push(path.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    Ok(out)
}

fn remove_if_present(path: &Path) -> Result<()> {
    let result = if path.is_dir() { fs::remove_dir_all(path) } else { fs::remove_file(path) };
    match result {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub pic1_holds: bool,
    pub pic1_first_failure: Option<f64>,
    pub growth_holds: Option<bool>,
    pub effective_delta: f64,
    pub volume_lower_bound: Option<f64>,
}

/// Static report for one profile, written to `<root>/<name>/analysis/`.
pub fn analyze(spec: &ProfileSpec, n: usize, name: &str, root: &Path) -> Result<RunManifest> {
    let mut spec = spec.clone();
    spec.fiber_dim = Some(spec.fiber_dim.unwrap_or(n));
    if spec.fiber_dim != Some(n) {
        return Err(Error::Configuration(format!("profile fiber_dim disagrees with n = {n}")));
    }
    let profile = spec.build()?;
    let dir = root.join(name).join("analysis");
    mkdir(&dir)?;
    let mut config_json = serde_json::to_string_pretty(&json!({ "profile_spec": spec, "n": n })).expect("serializes");
    config_json.push('\n');
    write_atomic(&dir.join("config.json"), config_json.as_bytes())?;
    let mut manifest = RunManifest::begin(name, RunKind::Analyze, &config_json);

    let end = profile.domain_end();
    let points: Vec<f64> = (1..=CURVATURE_POINTS).map(|i| end * i as f64 / CURVATURE_POINTS as f64).collect();
    let samples = curvature_field(&profile, &points)?;
    let mut csv = Vec::new();
    write_curvature_csv(&mut csv, &samples).expect("writing to memory");
    write_atomic(&dir.join("curvature.csv"), &csv)?;

    let pic1 = pic1_check(&profile, SCAN_DENSITY, PIC1_TOLERANCE);
    let (growth, growth_note) = match growth_bound_check(&profile, SCAN_DENSITY, PIC1_TOLERANCE) {
        Ok(g) => (Some(g), None),
        Err(Error::Precondition(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };
    write_atomic(
        &dir.join("pic1.json"),
        &pretty(&json!({ "pic1": pic1, "growth": growth, "growth_note": growth_note })),
    )?;

    let delta = effective_delta(&profile, SCAN_DENSITY);
    let volume = if delta > 0.0 { Some(volume_ratio_lower_bound(delta, n)?) } else { None };
    write_atomic(&dir.join("volume.json"), &pretty(&json!({ "effective_delta": delta, "volume": volume })))?;

    manifest.summary = serde_json::to_value(AnalyzeSummary {
        pic1_holds: pic1.holds,
        pic1_first_failure: pic1.first_failure,
        growth_holds: growth.as_ref().map(|g| g.holds),
        effective_delta: delta,
        volume_lower_bound: volume.map(|v| v.v),
    })
    .expect("serializes");
    manifest.finish(&dir, list_artifacts(&dir)?)?;
    register(root, &manifest, &Path::new(name).join("analysis"), "analyzed")?;
    Ok(manifest)
}

fn register(root: &Path, manifest: &RunManifest, rel: &Path, outcome: &str) -> Result<()> {
    let entry = RegistryEntry {
        name: manifest.name.clone(),
        kind: manifest.kind,
        dir: rel.to_path_buf(),
        config_hash: manifest.config_hash.clone(),
        finished_unix: manifest.finished_unix,
        outcome: outcome.to_string(),
    };
    append_registry(root, &entry)
}

fn flow_options(config: &ExperimentConfig, dir: &Path) -> FlowOptions {
    FlowOptions {
        checkpoint_dir: Some(dir.join("checkpoints")),
        series_path: Some(dir.join("series.csv")),
        ..config.flow_options()
    }
}

/// Run the configured flow into `<root>/<name>/`, replacing earlier output.
pub fn run_flow(config: &ExperimentConfig, root: &Path) -> Result<RunManifest> {
    config.validate()?;
    let dir = root.join(&config.name);
    mkdir(&dir)?;
    for stale in ["checkpoints", "verify", "series.csv", "dump.json", "manifest.json"] {
        remove_if_present(&dir.join(stale))?;
    }
    mkdir(&dir.join("checkpoints"))?;
    let config_json = config.to_json();
    write_atomic(&dir.join("config.json"), config_json.as_bytes())?;
    let manifest = RunManifest::begin(&config.name, RunKind::Flow, &config_json);
    let profile = config.profile()?;
    let state = init_state_with(
        &profile,
        config.n,
        config.grid.cells,
        config.grid.x_end,
        config.flow.bc_outer,
        config.init_grid(),
    )?;
    let outcome = evolve(state, config.horizon(), &flow_options(config, &dir));
    finish_flow(root, &dir, manifest, outcome)
}

/// Continue an interrupted run from its latest loadable checkpoint.
///
/// Series rows later than the checkpoint are dropped and recomputed; the
/// config's `max_steps` does not apply.
pub fn resume(dir: &Path) -> Result<RunManifest> {
    let config = ExperimentConfig::load(&dir.join("config.json"))?;
    let root = dir.parent().map(Path::to_path_buf).unwrap_or_default();
    let config_json = fs::read_to_string(dir.join("config.json")).map_err(|e| Error::io(dir.join("config.json"), e))?;
    let ckpts = checkpoint_files(dir)?;
    let (path, state) = ckpts
        .iter()
        .rev()
        .find_map(|p| load_checkpoint(p).ok().map(|s| (p.clone(), s)))
        .ok_or_else(|| Error::Usage(format!("no loadable checkpoint in {}", dir.join("checkpoints").display())))?;
    for later in ckpts.iter().filter(|p| **p > path) {
        remove_if_present(later)?;
    }
    remove_if_present(&dir.join("dump.json"))?;
    truncate_series(&dir.join("series.csv"), state.t)?;
    let manifest = RunManifest::begin(&config.name, RunKind::Flow, &config_json);
    let opts = FlowOptions { max_steps: None, ..flow_options(&config, dir) };
    let horizon = config.horizon();
    let outcome = if state.t >= horizon {
        // Nothing left to integrate: the checkpoint already sits on the horizon.
        let records = read_series(&dir.join("series.csv"))?;
        Ok(RunOutput {
            state,
            records,
            snapshots: Vec::new(),
            checkpoints: Vec::new(),
            termination: Termination::Horizon,
            regrids: 0,
        })
    } else {
        evolve(state, horizon, &opts)
    };
    finish_flow(&root, dir, manifest, outcome)
}

fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let cdir = dir.join("checkpoints");
    let entries = match fs::read_dir(&cdir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&cdir, e)),
    };
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&cdir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("ckpt_") && name.ends_with(".json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn truncate_series(path: &Path, t: f64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut kept = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0 || line.split(',').next().and_then(|c| c.parse::<f64>().ok()).is_some_and(|v| v <= t);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_atomic(path, kept.as_bytes())
}

pub(crate) fn finish_flow(
    root: &Path,
    dir: &Path,
    mut manifest: RunManifest,
    outcome: std::result::Result<RunOutput, EvolveFailure>,
) -> Result<RunManifest> {
    let out = outcome.map_err(|f| f.error)?;
    if let Termination::Blowup { .. } = out.termination {
        write_checkpoint(&dir.join("dump.json"), &out.state)?;
    }
    let records = read_series(&dir.join("series.csv"))?;
    let sup_lambda = records.iter().map(|r| r.lambda_t).fold(0.0, f64::max);
    let min_fs = records.iter().map(|r| r.min_fs).fold(f64::INFINITY, f64::min);
    manifest.summary = json!({
        "t_final": out.state.t,
        "steps": out.state.step,
        "records": records.len(),
        "regrids": out.regrids,
        "sup_lambda_t": sup_lambda,
        "min_fs": min_fs,
        "final_min_f": out.state.f.iter().copied().fold(f64::INFINITY, f64::min),
    });
    manifest.termination = Some(out.termination.clone());
    manifest.finish(dir, list_artifacts(dir)?)?;
    let rel = dir.strip_prefix(root).unwrap_or(dir);
    register(root, &manifest, rel, out.termination.label())?;
    Ok(manifest)
}

/// Stored states of a run, in step order.
pub(crate) fn load_states(dir: &Path) -> Result<Vec<GridState>> {
    let files = checkpoint_files(dir)?;
    if files.is_empty() {
        return Err(Error::Usage(format!("{} holds no checkpoints", dir.display())));
    }
    files.iter().map(|p| load_checkpoint(p)).collect()
}

/// Outcome of one oracle: its report as written and whether it passed.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    pub name: OracleName,
    pub report: Value,
    pub failed: bool,
}

/// Run oracles over a finished run's checkpoints, writing
/// `verify/<oracle>.json`. An empty `names` means the config's list, or all.
pub fn verify(dir: &Path, names: &[OracleName], tolerance_scale: Option<f64>) -> Result<Vec<VerifyOutcome>> {
    let config = ExperimentConfig::load(&dir.join("config.json"))?;
    let states = load_states(dir)?;
    let selected: Vec<OracleConfig> = if names.is_empty() {
        if config.oracles.is_empty() {
            OracleName::ALL.into_iter().map(OracleConfig::new).collect()
        } else {
            config.oracles.clone()
        }
    } else {
        names
            .iter()
            .map(|&n| config.oracles.iter().find(|o| o.name == n).cloned().unwrap_or_else(|| OracleConfig::new(n)))
            .collect()
    };
    let vdir = dir.join("verify");
    mkdir(&vdir)?;
    let mut outcomes = Vec::new();
    for oc in &selected {
        let opts =
            OracleOptions { tolerance_scale: tolerance_scale.unwrap_or(oc.tolerance_scale), ..Default::default() };
        let (report, failed) = match oc.name {
            OracleName::FsEvolutionResidual => {
                let series = fs_evolution_residual(&states, &opts)?;
                let r = summarize_residuals(oc.name.as_str(), &series, &opts);
                (json!({ "summary": r, "series": series }), r.verdict == Verdict::Fail)
            }
            OracleName::RicciPinch => {
                let out = ricci_pinch_residual(&states, &opts)?;
                let failed = out.report.verdict == Verdict::Fail;
                (json!({ "summary": out.report, "series": out.residuals }), failed)
            }
            OracleName::PhiBarrier => {
                let delta = oc.delta.unwrap_or_else(|| states[0].diagnostics(0.0).min_fs);
                let r = phi_barrier_check(&states, delta, &opts)?;
                let failed = r.verdict == Verdict::Fail;
                (serde_json::to_value(r).expect("serializes"), failed)
            }
            OracleName::Supersolution => {
                let r = supersolution_check(&states, &opts)?;
                let failed = r.verdict == Verdict::Fail;
                (serde_json::to_value(r).expect("serializes"), failed)
            }
            OracleName::DistanceDistortion => {
                let records = read_series(&dir.join("series.csv"))?;
                let c_fit = records.iter().map(|r| r.lambda_t).filter(|v| v.is_finite()).fold(0.0, f64::max);
                let r = distance_distortion_check(&states, c_fit)?;
                let failed = !r.is_finite();
                (serde_json::to_value(r).expect("serializes"), failed)
            }
        };
        write_atomic(&vdir.join(format!("{}.json", oc.name.as_str())), &pretty(&report))?;
        outcomes.push(VerifyOutcome { name: oc.name, report, failed });
    }
    // Keep the manifest's artifact list complete.
    if let Ok(mut manifest) = RunManifest::load(dir) {
        manifest.artifacts = list_artifacts(dir)?;
        manifest.artifacts.sort();
        manifest.write(dir)?;
    }
    Ok(outcomes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyVerdictLabel {
    Uniform,
    Drifting,
    Incomplete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRow {
    pub label: String,
    pub parameter: f64,
    /// Termination label, or `error`.
    pub termination: String,
    pub t_final: Option<f64>,
    pub lambda_fit: Option<f64>,
    /// Cylinders: relative error of `min f` against `√(c² − 2(n−1)t)` at the
    /// last record. Cylinder caps: relative error of the extinction time
    /// against `ε²/(8(n−1))`.
    pub closed_form_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub name: String,
    pub parameter: String,
    pub rows: Vec<FamilyRow>,
    pub lambda: Option<LambdaFitReport>,
    pub verdict: FamilyVerdictLabel,
}

impl FamilySummary {
    pub const CSV_HEADER: &'static str = "label,parameter,termination,t_final,lambda_fit,closed_form_error";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{},{},{},{}\n",
                r.label,
                r.parameter,
                r.termination,
                opt(r.t_final),
                opt(r.lambda_fit),
                opt(r.closed_form_error)
            ));
        }
        out
    }

    /// True when some member errored or blew up.
    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some() || r.termination == "blowup")
    }
}

fn closed_form_error(
    config: &ExperimentConfig,
    termination: &Termination,
    last: Option<&DiagnosticsRecord>,
) -> Option<f64> {
    let nm1 = config.n as f64 - 1.0;
    let param = |k: &str| config.profile_spec.params.get(k).and_then(Value::as_f64);
    match config.profile_spec.kind.as_str() {
        "cylinder" => {
            let c = param("radius")?;
            let r = last?;
            let exact = (c * c - 2.0 * nm1 * r.t).sqrt();
            (exact > 0.0).then(|| (r.min_f - exact).abs() / exact)
        }
        "cap_cylinder" => {
            let eps = param("eps")?;
            let exact = eps * eps / (8.0 * nm1);
            match termination {
                Termination::Extinction { t, .. } => Some((t - exact).abs() / exact),
                _ => None,
            }
        }
        _ => None,
    }
}

/// Run every sweep member (concurrently, at most `jobs` at once) into
/// `<root>/<member>/`, then fit Λ and write `<root>/<name>/family.{json,csv}`.
pub fn sweep(config: &ExperimentConfig, root: &Path, jobs: usize) -> Result<FamilySummary> {
    config.validate()?;
    let spec = config.sweep.clone().ok_or_else(|| Error::Usage(format!("config `{}` has no sweep", config.name)))?;
    let members: Vec<(f64, ExperimentConfig)> =
        spec.values.iter().map(|&v| config.member(spec.parameter, v).map(|m| (v, m))).collect::<Result<_>>()?;
    let dir = root.join(&config.name);
    mkdir(&dir)?;
    let config_json = config.to_json();
    write_atomic(&dir.join("config.json"), config_json.as_bytes())?;
    let mut manifest = RunManifest::begin(&config.name, RunKind::Sweep, &config_json);

    let results = par::with_jobs(jobs, || par::map_slice(Exec::Auto, &members, |(_, m)| run_flow(m, root)));

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for ((value, member), result) in members.iter().zip(results) {
        let mut row = FamilyRow {
            label: member.name.clone(),
            parameter: *value,
            termination: "error".into(),
            t_final: None,
            lambda_fit: None,
            closed_form_error: None,
            error: None,
        };
        let loaded = result.and_then(|m| read_series(&root.join(&member.name).join("series.csv")).map(|r| (m, r)));
        match loaded {
            Ok((m, records)) => {
                let termination = m.termination.clone().unwrap_or(Termination::Horizon);
                row.termination = termination.label().to_string();
                row.t_final = records.last().map(|r| r.t);
                row.closed_form_error = closed_form_error(member, &termination, records.last());
                let dt0 = records.iter().map(|r| r.dt_taken).find(|&d| d > 0.0).unwrap_or(0.0);
                runs.push(FamilyRun { label: member.name.clone(), parameter: *value, records, dt0 });
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    let lambda = if runs.len() >= 3 { Some(lambda_fit(&runs)?) } else { None };
    if let Some(report) = &lambda {
        for row in &mut rows {
            row.lambda_fit = report.rows.iter().find(|r| r.label == row.label).map(|r| r.lambda_fit);
        }
    }
    let incomplete = rows.iter().any(|r| r.termination != "horizon");
    let verdict = match (&lambda, incomplete) {
        (Some(report), false) => match report.verdict {
            crate::oracles::FamilyVerdict::Uniform => FamilyVerdictLabel::Uniform,
            crate::oracles::FamilyVerdict::Drifting => FamilyVerdictLabel::Drifting,
        },
        _ => FamilyVerdictLabel::Incomplete,
    };
    let summary = FamilySummary {
        name: config.name.clone(),
        parameter: spec.parameter.as_str().to_string(),
        rows,
        lambda,
        verdict,
    };
    write_atomic(&dir.join("family.json"), &pretty(&summary))?;
    write_atomic(&dir.join("family.csv"), summary.to_csv().as_bytes())?;
    manifest.summary = json!({ "verdict": summary.verdict, "members": summary.rows.len() });
    manifest.finish(&dir, list_artifacts(&dir)?)?;
    let label =
        serde_json::to_value(summary.verdict).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    register(root, &manifest, Path::new(&config.name), &label)?;
    Ok(summary)
}
