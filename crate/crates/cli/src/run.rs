use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byzmed::simulator::{run_with_problem, MetricsRecord, TrainingProblem};
use rayon::prelude::*;

use crate::config::{Cell, RunFile};
use crate::csv::{mean_std, render, render_mean, write_atomic};
use crate::CliError;

/// Environment variable capping worker threads for grid execution.
pub const THREADS_ENV: &str = "BYZMED_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub replicates: usize,
    /// Replicate r runs with seed `seed_base + r`; `None` uses the config seed.
    pub seed_base: Option<u64>,
    pub out_dir: PathBuf,
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub label: String,
    /// Final evaluation metric of every replicate.
    pub finals: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

impl CellSummary {
    pub fn line(&self) -> String {
        format!(
            "{}: eval_metric {:.6} ± {:.6} over {} replicates",
            self.label,
            self.mean,
            self.stddev,
            self.finals.len()
        )
    }
}

pub fn raw_csv_name(label: &str, replicate: usize) -> String {
    format!("{label}_rep{replicate}.csv")
}

pub fn mean_csv_name(label: &str) -> String {
    format!("{label}_mean.csv")
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let threads: usize = value
            .parse()
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
        builder = builder.num_threads(threads.max(1));
    }
    builder.build().map_err(|e| CliError::Io(e.to_string()))
}

struct Job<'a> {
    cell: &'a Cell,
    problem: Arc<TrainingProblem>,
    replicate: usize,
    seed: u64,
}

/// Runs every cell and replicate, writing CSVs into `manifest.out_dir`.
/// Summary lines go to `out` in grid order once all runs have finished.
pub fn cmd_run(manifest: &RunManifest, out: &mut dyn Write) -> Result<Vec<CellSummary>, CliError> {
    if manifest.replicates == 0 {
        return Err(CliError::Config("replicates must be >= 1".into()));
    }
    let run = RunFile::load(&manifest.config_path)?;
    let cells = run.cells()?;
    std::fs::create_dir_all(&manifest.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", manifest.out_dir.display())))?;

    // Cells that share a problem config share the built problem.
    let mut problems: Vec<(byzmed::simulator::ProblemConfig, Arc<TrainingProblem>)> = Vec::new();
    let mut jobs = Vec::new();
    let seed_base = manifest.seed_base.unwrap_or(run.experiment.seed);
    for cell in &cells {
        let problem = match problems.iter().find(|(c, _)| *c == cell.config.problem) {
            Some((_, p)) => Arc::clone(p),
            None => {
                let p = Arc::new(cell.config.problem.build()?);
                problems.push((cell.config.problem.clone(), Arc::clone(&p)));
                p
            }
        };
        cell.config.validate(&problem).map_err(|e| CliError::Cell {
            label: cell.label.clone(),
            source: e,
        })?;
        if let Some(warning) = cell.config.aggregator.resilience_warning(cell.config.n_workers) {
            eprintln!("warning: {}: {warning}", cell.label);
        }
        for replicate in 0..manifest.replicates {
            jobs.push(Job {
                cell,
                problem: Arc::clone(&problem),
                replicate,
                seed: seed_base.wrapping_add(replicate as u64),
            });
        }
    }

    let pool = thread_pool()?;
    let results: Vec<Result<Vec<MetricsRecord>, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut config = job.cell.config.clone();
                config.seed = job.seed;
                let path = manifest.out_dir.join(raw_csv_name(&job.cell.label, job.replicate));
                match run_with_problem(&config, &job.problem) {
                    Ok(trajectory) => {
                        write_atomic(&path, &render(&trajectory.records))?;
                        Ok(trajectory.records)
                    }
                    Err(failure) => {
                        write_atomic(&path, &render(&failure.partial))?;
                        Err(CliError::Cell {
                            label: format!("{} replicate {}", job.cell.label, job.replicate),
                            source: failure.error,
                        })
                    }
                }
            })
            .collect()
    });

    let mut by_cell: BTreeMap<usize, Vec<Vec<MetricsRecord>>> = BTreeMap::new();
    let mut first_error = None;
    for (job, result) in jobs.iter().zip(results) {
        let index = cells.iter().position(|c| std::ptr::eq(c, job.cell)).unwrap_or(0);
        match result {
            Ok(records) => by_cell.entry(index).or_default().push(records),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    let mut summaries = Vec::with_capacity(cells.len());
    for (index, cell) in cells.iter().enumerate() {
        let replicates = by_cell.remove(&index).unwrap_or_default();
        write_atomic(&manifest.out_dir.join(mean_csv_name(&cell.label)), &render_mean(&replicates))?;
        let finals: Vec<f64> = replicates
            .iter()
            .map(|r| r.last().map_or(f64::NAN, |rec| rec.eval_metric))
            .collect();
        let (mean, stddev) = mean_std(&finals);
        let summary = CellSummary {
            label: cell.label.clone(),
            finals,
            mean,
            stddev,
        };
        writeln!(out, "{}", summary.line()).map_err(|e| CliError::Io(e.to_string()))?;
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Convenience for tests and scripts.
pub fn run_path(config: &Path, out_dir: &Path, replicates: usize, seed_base: Option<u64>) -> Result<Vec<CellSummary>, CliError> {
    let manifest = RunManifest {
        config_path: config.to_path_buf(),
        replicates,
        seed_base,
        out_dir: out_dir.to_path_buf(),
    };
    cmd_run(&manifest, &mut std::io::sink())
}
