use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fs2::FileExt;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::sha256_hex;
use crate::flow::{DiagnosticsRecord, Termination};
use crate::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Analyze,
    Flow,
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub name: String,
    pub kind: RunKind,
    /// sha256 of `config.json` as stored next to the manifest.
    pub config_hash: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub termination: Option<Termination>,
    pub summary: Value,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub software_version: String,
}

impl RunManifest {
    pub(crate) fn begin(name: &str, kind: RunKind, config_json: &str) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA,
            name: name.to_string(),
            kind,
            config_hash: sha256_hex(config_json.as_bytes()),
            started_unix: now_unix(),
            finished_unix: f64::NAN,
            termination: None,
            summary: Value::Null,
            artifacts: Vec::new(),
            software_version: software_version(),
        }
    }

    /// Stamp the finish time, list `artifacts` and write `manifest.json`.
    pub(crate) fn finish(&mut self, dir: &Path, mut artifacts: Vec<String>) -> Result<()> {
        self.finished_unix = now_unix();
        artifacts.sort();
        artifacts.dedup();
        self.artifacts = artifacts;
        self.write(dir)
    }

    pub(crate) fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: format!("{} in {}", e.inner(), path.display()),
        })
    }

    /// Check that every listed artifact exists and is non-empty and that the
    /// stored config still hashes to `config_hash`.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        let config = dir.join("config.json");
        let bytes = fs::read(&config).map_err(|e| Error::io(&config, e))?;
        if sha256_hex(&bytes) != self.config_hash {
            return Err(Error::Configuration(format!("{} does not match the manifest hash", config.display())));
        }
        for rel in &self.artifacts {
            let path = dir.join(rel);
            let len = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
            if len == 0 {
                return Err(Error::Configuration(format!("artifact {} is empty", path.display())));
            }
        }
        Ok(())
    }
}

pub(crate) fn software_version() -> String {
    format!("rsrf-core {}", env!("CARGO_PKG_VERSION"))
}

pub(crate) fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Write via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

/// One line of `registry.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub kind: RunKind,
    /// Run directory relative to the registry root.
    pub dir: PathBuf,
    pub config_hash: String,
    pub finished_unix: f64,
    pub outcome: String,
}

/// Append `entry` under an exclusive advisory lock.
pub fn append_registry(root: &Path, entry: &RegistryEntry) -> Result<()> {
    let path = root.join("registry.jsonl");
    let mut line = serde_json::to_string(entry).expect("registry entries serialize");
    line.push('\n');
    let io = |e| Error::io(&path, e);
    let mut file = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
    file.lock_exclusive().map_err(io)?;
    let written = file.write_all(line.as_bytes()).and_then(|_| file.flush());
    let unlocked = FileExt::unlock(&file);
    written.map_err(io)?;
    unlocked.map_err(io)
}

fn parse_row(line: &str) -> Option<DiagnosticsRecord> {
    let v: Vec<f64> = line.split(',').map(|c| c.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().ok()?;
    match v[..] {
        [t, sup_rm, lambda_t, min_fs, min_f, min_scal, max_scal, dt_taken] => {
            Some(DiagnosticsRecord { t, sup_rm, lambda_t, min_fs, min_f, min_scal, max_scal, dt_taken })
        }
        _ => None,
    }
}

/// Read a diagnostics CSV written by a run.
pub fn read_series(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(DiagnosticsRecord::CSV_HEADER) {
        return Err(Error::Parse { path: path.display().to_string(), message: "unexpected CSV header".into() });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            parse_row(l).ok_or_else(|| Error::Parse {
                path: format!("{}:{}", path.display(), i + 2),
                message: "expected 8 numeric columns".into(),
            })
        })
        .collect()
}
