use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use rsrf_core::flow::Termination;
use rsrf_core::harness::{self, ExperimentConfig, OracleName};
use rsrf_core::par;
use rsrf_core::{Error, ProfileSpec, Result};

#[derive(Parser)]
#[command(name = "rsrf", version, about = "Rotationally symmetric Ricci flow laboratory")]
struct Cli {
    /// Experiment config (JSON); `analyze` also accepts a bare profile spec.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root for run directories; defaults to the config's `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads for sweeps and batch work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override every oracle tolerance multiplier.
    #[arg(long, global = true)]
    tolerance_scale: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Curvature, PIC1, growth and volume report for the initial profile.
    Analyze,
    /// Run the configured flow.
    Flow,
    /// Run every member of the configured sweep and fit Λ.
    Sweep,
    /// Check stored states against the oracles.
    Verify {
        run_dir: PathBuf,
        /// Oracle names; defaults to the run config's list, or all.
        oracles: Vec<String>,
    },
    /// Continue an interrupted run from its latest checkpoint.
    Resume { run_dir: PathBuf },
}

/// Success with an exit code and a JSON summary for stdout.
struct Outcome {
    code: u8,
    summary: Value,
}

fn need_config(cli: &Cli) -> Result<&Path> {
    cli.config.as_deref().ok_or_else(|| Error::Usage("--config is required for this command".into()))
}

fn output_root(cli: &Cli, config: Option<&ExperimentConfig>) -> PathBuf {
    cli.output_dir.clone().or_else(|| config.map(|c| c.output_dir.clone())).unwrap_or_else(|| PathBuf::from("runs"))
}

fn analyze(cli: &Cli) -> Result<Outcome> {
    let path = need_config(cli)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })?;
    // A document with a top-level `kind` is a profile spec, anything else a full config.
    let manifest = if value.get("kind").is_some() {
        let spec = ProfileSpec::from_json(&text)?;
        let n = spec.fiber_dim.ok_or_else(|| Error::Parse { path: "fiber_dim".into(), message: "missing".into() })?;
        harness::analyze(&spec, n, &spec.kind.clone(), &output_root(cli, None))?
    } else {
        let config = ExperimentConfig::from_json(&text)?;
        harness::analyze(&config.profile_spec, config.n, &config.name, &output_root(cli, Some(&config)))?
    };
    Ok(Outcome { code: 0, summary: serde_json::to_value(manifest).expect("serializes") })
}

fn flow(cli: &Cli) -> Result<Outcome> {
    let config = ExperimentConfig::load(need_config(cli)?)?;
    let manifest = harness::run_flow(&config, &output_root(cli, Some(&config)))?;
    Ok(flow_outcome(manifest))
}

fn flow_outcome(manifest: harness::RunManifest) -> Outcome {
    let code = match manifest.termination {
        Some(Termination::Blowup { .. }) => 3,
        _ => 0,
    };
    Outcome { code, summary: serde_json::to_value(manifest).expect("serializes") }
}

fn sweep(cli: &Cli, jobs: usize) -> Result<Outcome> {
    let config = ExperimentConfig::load(need_config(cli)?)?;
    let family = harness::sweep(&config, &output_root(cli, Some(&config)), jobs)?;
    let code = if family.has_failures() { 3 } else { 0 };
    Ok(Outcome { code, summary: serde_json::to_value(family).expect("serializes") })
}

fn verify(cli: &Cli, run_dir: &Path, oracles: &[String]) -> Result<Outcome> {
    let names = oracles.iter().map(|s| OracleName::parse(s)).collect::<Result<Vec<_>>>()?;
    let outcomes = harness::verify(run_dir, &names, cli.tolerance_scale)?;
    let code = if outcomes.iter().any(|o| o.failed) { 3 } else { 0 };
    let summary: Vec<Value> =
        outcomes.iter().map(|o| json!({ "oracle": o.name.as_str(), "failed": o.failed })).collect();
    Ok(Outcome { code, summary: Value::Array(summary) })
}

fn run(cli: &Cli) -> Result<Outcome> {
    let jobs = cli.jobs.unwrap_or_else(par::default_jobs);
    if jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    if let Some(s) = cli.tolerance_scale {
        if s.is_nan() || s <= 0.0 {
            return Err(Error::Usage(format!("--tolerance-scale must be positive, got {s}")));
        }
    }
    par::with_jobs(jobs, || match &cli.command {
        Command::Analyze => analyze(cli),
        Command::Flow => flow(cli),
        Command::Sweep => sweep(cli, jobs),
        Command::Verify { run_dir, oracles } => verify(cli, run_dir, oracles),
        Command::Resume { run_dir } => harness::resume(run_dir).map(flow_outcome),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out.summary).expect("serializes"));
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("rsrf: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
