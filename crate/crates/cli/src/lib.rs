//! Command implementations behind the `byzmed` binary.

pub mod config;
pub mod csv;
pub mod run;
pub mod verify;

use std::io::Write;

use byzmed::attacks::AttackKind;
use byzmed::AggregatorKind;

pub use config::{Cell, Grid, RunFile};
pub use run::{cmd_run, run_path, CellSummary, RunManifest, THREADS_ENV};
pub use verify::{cmd_verify, Status, VerifyReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cell {label}: {source}")]
    Cell {
        label: String,
        #[source]
        source: byzmed::Error,
    },
    #[error(transparent)]
    Core(byzmed::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

pub const PROBLEM_KINDS: [(&str, &str); 3] = [
    ("quadratic", "optimum, noise (default 0)"),
    (
        "synthetic_logistic",
        "features, samples, test_samples, weight_norm (default 8), l2 (default 0), data_seed (default 0)",
    ),
    ("mnist", "path, max_per_class, l2 (default 0)"),
];

/// Lines printed by `list`, in a fixed order.
pub fn list_lines() -> Vec<String> {
    let mut lines = Vec::new();
    for kind in AggregatorKind::ALL {
        lines.push(format!("aggregator {:<18} {}", kind.name(), kind.parameters()));
    }
    for name in AttackKind::NAMES {
        lines.push(format!("attack     {:<18} {}", name, AttackKind::parameters(name)));
    }
    for (name, params) in PROBLEM_KINDS {
        lines.push(format!("problem    {name:<18} {params}"));
    }
    lines
}

pub fn cmd_list(out: &mut dyn Write) -> std::io::Result<()> {
    for line in list_lines() {
        writeln!(out, "{line}")?;
    }
    Ok(())
}
