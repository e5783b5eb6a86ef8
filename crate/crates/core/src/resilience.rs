//! Resilience-bound calculators and Monte-Carlo checks.
//!
//! Each rule with a resilience guarantee has a variance-amplification factor
//! η(n, q). The guarantee requires η·√d·σ < ‖g‖, where σ² is the per-dimension
//! variance of a correct gradient and g its expectation; the angle α between
//! the expected aggregate and g then satisfies sin α = η·√d·σ / ‖g‖.

use rand_distr::{Distribution, Normal};
use rand::Rng;
use serde::Serialize;

use crate::aggregators::{AggregatorKind, AggregatorSpec};
use crate::attacks::{apply_attack, dimensional_worst_case, AttackContext, AttackSpec};
use crate::error::{Error, Result};
use crate::grad::{dot, GradMatrix};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResilienceBound {
    pub eta: f64,
    pub sin_alpha: f64,
    pub satisfiable: bool,
}

impl ResilienceBound {
    pub fn new(eta: f64, d: usize, sigma: f64, gnorm: f64) -> Self {
        let sin_alpha = eta * (d as f64).sqrt() * sigma / gnorm;
        ResilienceBound {
            eta,
            sin_alpha,
            satisfiable: sin_alpha < 1.0,
        }
    }
}

fn majority_bound(n: usize, q: usize, rule: &str) -> Result<()> {
    let limit = n.div_ceil(2).saturating_sub(1);
    if n == 0 || q > limit {
        return Err(Error::param(format!(
            "{rule} bound requires q <= ceil(n/2) - 1 = {limit}, got q = {q}, n = {n}"
        )));
    }
    Ok(())
}

/// Krum's factor η₀ with η₀² = 2(n - q + (q(n-q-2) + q²(n-q-1)) / (n-2q-2)).
pub fn eta_krum(n: usize, q: usize) -> Result<f64> {
    if 2 * q + 2 >= n {
        return Err(Error::param(format!("krum bound requires 2q + 2 < n, got q = {q}, n = {n}")));
    }
    let (n, q) = (n as f64, q as f64);
    let cross = (q * (n - q - 2.0) + q * q * (n - q - 1.0)) / (n - 2.0 * q - 2.0);
    Ok((2.0 * (n - q + cross)).sqrt())
}

/// Geometric median: η₁ = (2n - 2q)/(n - 2q) · √(n - q).
pub fn eta_geomed(n: usize, q: usize) -> Result<f64> {
    majority_bound(n, q, "geomed")?;
    let (n, q) = (n as f64, q as f64);
    Ok((2.0 * n - 2.0 * q) / (n - 2.0 * q) * (n - q).sqrt())
}

/// Marginal median: η₂ = √(n - q).
pub fn eta_marmed(n: usize, q: usize) -> Result<f64> {
    majority_bound(n, q, "marmed")?;
    Ok(((n - q) as f64).sqrt())
}

/// Mean around median: η₃ = √(10(n - q)).
pub fn eta_meamed(n: usize, q: usize) -> Result<f64> {
    majority_bound(n, q, "meamed")?;
    Ok((10.0 * (n - q) as f64).sqrt())
}

/// η for rules that have one; `None` for rules without a resilience bound.
pub fn eta_for(kind: AggregatorKind, n: usize, q: usize) -> Option<Result<f64>> {
    match kind {
        AggregatorKind::Krum => Some(eta_krum(n, q)),
        AggregatorKind::GeoMed => Some(eta_geomed(n, q)),
        AggregatorKind::MarMed => Some(eta_marmed(n, q)),
        AggregatorKind::MeaMed => Some(eta_meamed(n, q)),
        _ => None,
    }
}

pub fn bound_for(kind: AggregatorKind, n: usize, q: usize, d: usize, sigma: f64, gnorm: f64) -> Option<Result<ResilienceBound>> {
    eta_for(kind, n, q).map(|eta| eta.map(|eta| ResilienceBound::new(eta, d, sigma, gnorm)))
}

/// How the correct round matrix is corrupted in a Monte-Carlo trial.
#[derive(Debug, Clone, PartialEq)]
pub enum Adversary {
    Attack(AttackSpec),
    /// The last row is replaced by -g - (sum of the others), so the mean is -g/n.
    MeanCounterexample,
    /// Row i gets a huge value opposite to g in dimension i.
    DiagonalWorstCase,
    /// In every column, `per_column` uniformly placed entries become
    /// ±10^u with u uniform in [0, max_log10].
    RandomDimensional { per_column: usize, max_log10: f64 },
}

impl Adversary {
    fn corrupt(&self, m: &GradMatrix, g: &[f64], seed: u64, trial: u64) -> Result<GradMatrix> {
        match self {
            Adversary::Attack(spec) => apply_attack(spec, &AttackContext::new(seed, trial), m),
            Adversary::MeanCounterexample => mean_counterexample_from(m, g),
            Adversary::DiagonalWorstCase => dimensional_worst_case(m, g),
            Adversary::RandomDimensional { per_column, max_log10 } => {
                if *per_column > m.n() {
                    return Err(Error::param("per_column exceeds worker count"));
                }
                let mut rng = stream(seed, trial, Purpose::Attack);
                let mut out = m.clone();
                for j in 0..m.d() {
                    for i in rand::seq::index::sample(&mut rng, m.n(), *per_column) {
                        let magnitude = 10f64.powf(rng.random::<f64>() * max_log10);
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        out.set(i, j, sign * magnitude);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Monte-Carlo estimate of ⟨E[Aggr], g⟩ with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerProductEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
}

pub const MIN_TRIALS: usize = 100;
pub const DEFAULT_TRIALS: usize = 10_000;

/// Draws `n` rows g + N(0, σ²I).
pub fn sample_correct_rows(g: &[f64], sigma: f64, n: usize, seed: u64, trial: u64) -> Result<GradMatrix> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = stream(seed, trial, Purpose::MonteCarlo);
    let mut data = Vec::with_capacity(n * g.len());
    for _ in 0..n {
        data.extend(g.iter().map(|&gj| gj + normal.sample(&mut rng)));
    }
    GradMatrix::from_flat(data, n, g.len())
}

/// Estimates condition (i), ⟨E[Aggr], g⟩, over `trials` independent rounds of
/// `n` correct gradients corrupted by `adversary`.
pub fn check_condition_i(
    agg: &AggregatorSpec,
    adversary: &Adversary,
    g: &[f64],
    sigma: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<InnerProductEstimate> {
    if trials < MIN_TRIALS {
        return Err(Error::param(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for t in 0..trials as u64 {
        let correct = sample_correct_rows(g, sigma, n, seed, t)?;
        let received = adversary.corrupt(&correct, g, seed, t)?;
        let out = agg.aggregate(&received)?;
        let ip = dot(&out, g);
        sum += ip;
        sum_sq += ip * ip;
    }
    let k = trials as f64;
    let mean = sum / k;
    let var = ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0);
    let std_err = (var / k).sqrt();
    Ok(InnerProductEstimate {
        mean,
        std_err,
        ci_low: mean - 1.96 * std_err,
        ci_high: mean + 1.96 * std_err,
        trials,
    })
}

/// Finite-sample sanity check of the second moment with no attack:
/// E‖Aggr‖² should not exceed (n - q)·E‖G‖².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondMomentCheck {
    pub aggregate_second_moment: f64,
    pub bound: f64,
}

impl SecondMomentCheck {
    pub fn holds(&self) -> bool {
        self.aggregate_second_moment <= self.bound
    }
}

pub fn check_second_moment(
    agg: &AggregatorSpec,
    g: &[f64],
    sigma: f64,
    n: usize,
    q: usize,
    trials: usize,
    seed: u64,
) -> Result<SecondMomentCheck> {
    if trials < MIN_TRIALS {
        return Err(Error::param(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    if q >= n {
        return Err(Error::param("q must be below n"));
    }
    let mut agg_sq = 0.0;
    let mut row_sq = 0.0;
    for t in 0..trials as u64 {
        let m = sample_correct_rows(g, sigma, n, seed, t)?;
        let out = agg.aggregate(&m)?;
        agg_sq += dot(&out, &out);
        row_sq += m.rows().map(|r| dot(r, r)).sum::<f64>() / n as f64;
    }
    let k = trials as f64;
    Ok(SecondMomentCheck {
        aggregate_second_moment: agg_sq / k,
        bound: (n - q) as f64 * row_sq / k,
    })
}

/// Replaces the last row of `correct` by -g - Σ(other rows), making the
/// mean exactly -g/n up to rounding.
pub fn mean_counterexample_from(correct: &GradMatrix, g: &[f64]) -> Result<GradMatrix> {
    let (n, d) = (correct.n(), correct.d());
    if g.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: g.len() });
    }
    let mut last: Vec<f64> = g.iter().map(|x| -x).collect();
    for row in correct.rows().take(n - 1) {
        for (l, x) in last.iter_mut().zip(row) {
            *l -= x;
        }
    }
    let mut out = correct.clone();
    out.row_mut(n - 1).copy_from_slice(&last);
    Ok(out)
}

/// n rows, the first n - 1 equal to g and the last cancelling them so that
/// the mean is -g/n.
pub fn build_mean_counterexample(g: &[f64], n: usize) -> Result<GradMatrix> {
    if n == 0 || g.is_empty() {
        return Err(Error::param("need n >= 1 and a non-empty g"));
    }
    let rows = vec![g.to_vec(); n];
    mean_counterexample_from(&GradMatrix::from_rows(&rows)?, g)
}

/// n copies of g (each of length d) with the diagonal corrupted; defeats
/// every rule that returns one of its input rows.
pub fn build_selection_counterexample(g: &[f64], n: usize, d: usize) -> Result<GradMatrix> {
    if g.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: g.len() });
    }
    if n == 0 || n > d {
        return Err(Error::param(format!("selection counterexample needs 1 <= n <= d, got n = {n}, d = {d}")));
    }
    let rows = vec![g.to_vec(); n];
    dimensional_worst_case(&GradMatrix::from_rows(&rows)?, g)
}
