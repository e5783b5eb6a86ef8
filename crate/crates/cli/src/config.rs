//! Run files: one experiment plus an optional grid of aggregators × attacks.
//!
//! A run file is TOML. Top-level keys are the experiment fields; an optional
//! `[grid]` table lists aggregator kinds and attack tables to cross.
//!
//! ```toml
//! n_workers = 20
//! rounds = 500
//! batch_size = 32
//! seed = 1
//! lr = { schedule = "constant", gamma = 0.1 }
//! aggregator = { kind = "meamed", q = 6 }
//! attack = { kind = "none" }
//! problem = { kind = "quadratic", optimum = [1.0, 2.0], noise = 0.1 }
//!
//! [grid]
//! aggregators = ["mean", "marmed"]
//! attacks = [{ kind = "none" }, { kind = "gaussian", q = 6, sigma = 200.0 }]
//! ```

use std::collections::HashMap;
use std::path::Path;

use byzmed::simulator::{ExperimentConfig, ProblemConfig};
use byzmed::{AggregatorKind, AttackSpec, Error};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    /// Kinds substituted into the base aggregator; other fields are kept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aggregators: Vec<AggregatorKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<AttackSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub experiment: ExperimentConfig,
    pub grid: Option<Grid>,
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// `<aggregator>__<attack>`, made unique within the grid.
    pub label: String,
    pub config: ExperimentConfig,
}

fn toml_error(e: toml::de::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(toml_error)?;
        let grid = match table.remove("grid") {
            Some(value) => Some(value.try_into::<Grid>().map_err(|e| CliError::Config(format!("in [grid]: {e}")))?),
            None => None,
        };
        let experiment: ExperimentConfig = table.try_into().map_err(toml_error)?;
        Ok(RunFile { experiment, grid })
    }

    /// Reads a run file; relative data paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut run = Self::parse(&text)?;
        if let ProblemConfig::Mnist { path: data, .. } = &mut run.experiment.problem {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(run)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        let mut table = toml::Table::try_from(&self.experiment).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(grid) = &self.grid {
            let value = toml::Value::try_from(grid).map_err(|e| CliError::Config(e.to_string()))?;
            table.insert("grid".into(), value);
        }
        toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Expands the grid, validating the shape of every cell.
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let base = &self.experiment;
        let grid = self.grid.clone().unwrap_or_default();
        let kinds = if grid.aggregators.is_empty() { vec![base.aggregator.kind] } else { grid.aggregators };
        let attacks = if grid.attacks.is_empty() { vec![base.attack.clone()] } else { grid.attacks };

        let mut cells = Vec::with_capacity(kinds.len() * attacks.len());
        let mut seen: HashMap<String, usize> = HashMap::new();
        for &kind in &kinds {
            for attack in &attacks {
                let mut config = base.clone();
                config.aggregator.kind = kind;
                config.attack = attack.clone();
                let mut label = format!("{}__{}", kind, attack.kind.name());
                let count = seen.entry(label.clone()).or_insert(0);
                *count += 1;
                if *count > 1 {
                    label = format!("{label}-{count}");
                }
                config.validate_shape().map_err(|e| CliError::Cell {
                    label: label.clone(),
                    source: e,
                })?;
                cells.push(Cell { label, config });
            }
        }
        Ok(cells)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => CliError::Config(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
