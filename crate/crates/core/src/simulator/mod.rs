//! Synchronous parameter-server SGD.
//!
//! Each round every worker computes a stochastic gradient at the current
//! parameters, the attack corrupts the round matrix, the server aggregates it
//! and takes the step x ← x − γ_t · Aggr. All randomness comes from streams
//! keyed by (seed, round, worker), so a run is a pure function of its config.

mod mnist;
mod problem;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorSpec;
use crate::attacks::{apply_attack, AttackContext, AttackKind, AttackSpec};
use crate::error::{Error, Result};
use crate::grad::{GradMatrix, GradVector};
use crate::rng::{stream, Purpose};

pub use mnist::{
    encode_idx_images, encode_idx_labels, load_mnist_subset, parse_idx_images, parse_idx_labels, write_mnist_pair,
    IdxImages, IMAGES_MAGIC, LABELS_MAGIC, MNIST_CLASSES,
};
pub use problem::{synthetic_logistic, Dataset, TrainingProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { gamma: f64 },
    /// γ_t = γ₀ / (1 + t)
    InverseT { gamma0: f64 },
}

impl LrSchedule {
    pub fn at(&self, round: usize) -> f64 {
        match *self {
            LrSchedule::Constant { gamma } => gamma,
            LrSchedule::InverseT { gamma0 } => gamma0 / (1.0 + round as f64),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant { gamma } => gamma,
            LrSchedule::InverseT { gamma0 } => gamma0,
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant { gamma: 0.1 }
    }
}

/// How to obtain the training problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        optimum: Vec<f64>,
        #[serde(default)]
        noise: f64,
    },
    SyntheticLogistic {
        features: usize,
        samples: usize,
        test_samples: usize,
        #[serde(default = "default_weight_norm")]
        weight_norm: f64,
        #[serde(default)]
        l2: f64,
        #[serde(default)]
        data_seed: u64,
    },
    Mnist {
        path: PathBuf,
        max_per_class: usize,
        #[serde(default)]
        l2: f64,
    },
}

fn default_weight_norm() -> f64 {
    8.0
}

impl ProblemConfig {
    pub fn build(&self) -> Result<TrainingProblem> {
        let problem = match self {
            ProblemConfig::Quadratic { optimum, noise } => TrainingProblem::Quadratic {
                optimum: optimum.clone(),
                noise: *noise,
            },
            ProblemConfig::SyntheticLogistic {
                features,
                samples,
                test_samples,
                weight_norm,
                l2,
                data_seed,
            } => synthetic_logistic(*features, *samples, *test_samples, *weight_norm, *l2, *data_seed)?,
            ProblemConfig::Mnist { path, max_per_class, l2 } => load_mnist_subset(path, *max_per_class, *l2)?,
        };
        problem.validate()?;
        Ok(problem)
    }
}

fn default_eval_every() -> usize {
    10
}

fn default_num_servers() -> usize {
    1
}

fn default_batch_size() -> usize {
    32
}

/// Everything that determines one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_workers: usize,
    pub rounds: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Servers the parameters are partitioned across (gambler attack).
    #[serde(default = "default_num_servers")]
    pub num_servers: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Record aggregation wall time. Off by default so outputs are
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub lr: LrSchedule,
    pub aggregator: AggregatorSpec,
    pub attack: AttackSpec,
    pub problem: ProblemConfig,
}

impl ExperimentConfig {
    /// Checks every field that does not need the built problem.
    pub fn validate_shape(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be >= 1"));
        }
        if self.n_workers == 0 {
            return Err(Error::config("n_workers", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be >= 1"));
        }
        if self.num_servers == 0 {
            return Err(Error::config("num_servers", "must be >= 1"));
        }
        let gamma = self.lr.base();
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::config("lr", format!("learning rate must be positive, got {gamma}")));
        }
        if let AttackKind::Gambler { num_servers: Some(s), .. } = self.attack.kind {
            if s != self.num_servers {
                return Err(Error::config(
                    "attack.num_servers",
                    format!("gambler uses {s} servers but the experiment has num_servers = {}", self.num_servers),
                ));
            }
        }
        self.aggregator
            .validate(self.n_workers)
            .map_err(|e| Error::config("aggregator", e.to_string()))
    }

    /// The attack with inherited fields filled in.
    pub fn resolved_attack(&self) -> AttackSpec {
        let mut spec = self.attack.clone();
        if let AttackKind::Gambler { num_servers, .. } = &mut spec.kind {
            num_servers.get_or_insert(self.num_servers);
        }
        spec
    }

    pub fn validate(&self, problem: &TrainingProblem) -> Result<()> {
        self.validate_shape()?;
        self.resolved_attack()
            .validate(self.n_workers, problem.dim())
            .map_err(|e| Error::config("attack", e.to_string()))?;
        if let Some(len) = problem.train_len() {
            if len < self.batch_size {
                return Err(Error::config(
                    "batch_size",
                    format!("batch of {} exceeds the {len} training samples", self.batch_size),
                ));
            }
        }
        Ok(())
    }
}

/// Observables recorded at evaluation rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    /// Number of completed rounds.
    pub round: usize,
    pub train_loss: f64,
    /// Accuracy for classifiers, ‖x − x*‖ for the quadratic.
    pub eval_metric: f64,
    /// ‖Aggr‖ in the last completed round.
    pub grad_norm: f64,
    /// Mean aggregation wall time (seconds) since the previous record; 0 when
    /// timing is off.
    pub agg_wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub x: GradVector,
    pub round: usize,
}

impl TrainingState {
    pub fn new(x: GradVector) -> Self {
        TrainingState { x, round: 0 }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(GradVector::zeros(d))
    }
}

/// Result of a single round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub aggregate: GradVector,
    pub grad_norm: f64,
    pub agg_wall_time: f64,
}

/// Gradients of all workers at `x`, in worker order.
pub fn collect_gradients(config: &ExperimentConfig, problem: &TrainingProblem, x: &[f64], round: usize) -> Result<GradMatrix> {
    let d = problem.dim();
    let mut data = Vec::with_capacity(config.n_workers * d);
    for worker in 0..config.n_workers {
        let mut rng = stream(config.seed, round as u64, Purpose::Worker(worker));
        data.extend_from_slice(&problem.worker_gradient(x, config.batch_size, &mut rng));
    }
    GradMatrix::from_flat(data, config.n_workers, d)
}

/// Runs one synchronous round and advances `state`.
pub fn run_round(state: &mut TrainingState, config: &ExperimentConfig, problem: &TrainingProblem) -> Result<RoundReport> {
    let t = state.round;
    if t >= config.rounds {
        return Err(Error::param(format!("round {t} beyond configured {} rounds", config.rounds)));
    }
    let wrap = |e: Error| Error::Round { round: t, source: Box::new(e) };

    let correct = collect_gradients(config, problem, &state.x, t).map_err(wrap)?;
    let attack = config.resolved_attack();
    let received = apply_attack(&attack, &AttackContext::new(config.seed, t as u64), &correct).map_err(wrap)?;

    let started = Instant::now();
    let aggregate = config.aggregator.aggregate(&received).map_err(wrap)?;
    let elapsed = started.elapsed().as_secs_f64();

    let gamma = config.lr.at(t);
    for (xi, a) in state.x.iter_mut().zip(aggregate.iter()) {
        *xi -= gamma * a;
    }
    state.round += 1;
    Ok(RoundReport {
        grad_norm: aggregate.norm(),
        aggregate,
        agg_wall_time: if config.record_timing { elapsed } else { 0.0 },
    })
}

/// Metrics trajectory plus the final parameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<MetricsRecord>,
    pub params: GradVector,
}

/// A run that stopped early; `partial` holds the metrics recorded so far.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub partial: Vec<MetricsRecord>,
    pub error: Error,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure { partial: Vec::new(), error }
    }
}

/// Runs `config.rounds` rounds on an already built problem, recording
/// metrics every `eval_every` rounds and after the final round.
pub fn run_with_problem(config: &ExperimentConfig, problem: &TrainingProblem) -> std::result::Result<Trajectory, RunFailure> {
    config.validate(problem)?;
    let mut state = TrainingState::zeros(problem.dim());
    let mut records = Vec::new();
    let mut time_since_record = 0.0;
    let mut rounds_since_record = 0usize;
    while state.round < config.rounds {
        let report = match run_round(&mut state, config, problem) {
            Ok(r) => r,
            Err(error) => return Err(RunFailure { partial: records, error }),
        };
        time_since_record += report.agg_wall_time;
        rounds_since_record += 1;
        if state.round % config.eval_every == 0 || state.round == config.rounds {
            records.push(MetricsRecord {
                round: state.round,
                train_loss: problem.loss(&state.x),
                eval_metric: problem.eval_metric(&state.x),
                grad_norm: report.grad_norm,
                agg_wall_time: time_since_record / rounds_since_record as f64,
            });
            time_since_record = 0.0;
            rounds_since_record = 0;
        }
    }
    Ok(Trajectory { records, params: state.x })
}

/// Builds the problem from the config and runs one replicate.
pub fn run_experiment(config: &ExperimentConfig) -> std::result::Result<Trajectory, RunFailure> {
    config.validate_shape()?;
    let problem = config.problem.build()?;
    run_with_problem(config, &problem)
}
