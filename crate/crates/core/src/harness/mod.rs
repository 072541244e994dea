//! Reproducible experiments on top of the numerical modules.
//!
//! A run lives in one directory:
//!
//! ```text
//! <root>/<name>/
//!     config.json            canonical config (hashed into the manifest)
//!     series.csv             diagnostics, one row per record
//!     checkpoints/ckpt_*.json
//!     dump.json              final state, only after a blowup
//!     verify/<oracle>.json   written by `verify`
//!     manifest.json
//! ```
//!
//! Every completed operation also appends one line to `<root>/registry.jsonl`.

mod config;
mod ops;
mod record;

pub use config::{
    sha256_hex, ExperimentConfig, FlowConfig, GridConfig, OracleConfig, OracleName, SweepConfig, SweepParameter,
};
pub use ops::{
    analyze, resume, run_flow, sweep, verify, AnalyzeSummary, FamilyRow, FamilySummary, FamilyVerdictLabel,
    VerifyOutcome,
};
pub use record::{append_registry, read_series, write_atomic, RegistryEntry, RunKind, RunManifest, MANIFEST_SCHEMA};

use crate::Error;

/// Process exit code for an error: 2 configuration, 3 numerical, 4 I/O.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Parse { .. } | Error::Configuration(_) | Error::Parameter(_) | Error::Usage(_) => 2,
        Error::Domain(_) | Error::Construction { .. } | Error::Precondition(_) => 3,
        Error::Io { .. } => 4,
    }
}

#[cfg(test)]
mod tests;
