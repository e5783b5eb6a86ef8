use std::fmt::Write as _;

use byzmed::aggregators::{agg_krum, agg_mean, agg_medoid};
use byzmed::grad::dot;
use byzmed::resilience::{bound_for, build_mean_counterexample, build_selection_counterexample, ResilienceBound};
use byzmed::AggregatorKind;

use crate::CliError;

/// Rules that carry an η factor, in table order.
pub const BOUNDED_RULES: [AggregatorKind; 4] = [
    AggregatorKind::Krum,
    AggregatorKind::GeoMed,
    AggregatorKind::MarMed,
    AggregatorKind::MeaMed,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Satisfied,
    Violated,
    NotApplicable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Satisfied => "SATISFIED",
            Status::Violated => "VIOLATED",
            Status::NotApplicable => "N/A",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub rule: AggregatorKind,
    pub bound: Option<ResilienceBound>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleCheck {
    pub name: String,
    /// ⟨output, g⟩, or `None` when the construction does not apply.
    pub inner_product: Option<f64>,
}

impl CounterexampleCheck {
    /// The construction applies and drives the rule against g.
    pub fn passed(&self) -> bool {
        self.inner_product.is_some_and(|ip| ip < 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<BoundRow>,
    pub checks: Vec<CounterexampleCheck>,
    pub text: String,
}

impl VerifyReport {
    pub fn row(&self, rule: AggregatorKind) -> Option<&BoundRow> {
        self.rows.iter().find(|r| r.rule == rule)
    }
}

/// η table and counterexample checks for n workers, q Byzantine, dimension
/// d, noise σ and true-gradient norm ‖g‖.
pub fn cmd_verify(n: usize, q: usize, d: usize, sigma: f64, gnorm: f64) -> Result<VerifyReport, CliError> {
    if n == 0 || d == 0 {
        return Err(CliError::Config("n and d must be >= 1".into()));
    }
    if !(sigma >= 0.0) || !(gnorm > 0.0) {
        return Err(CliError::Config("sigma must be >= 0 and gnorm > 0".into()));
    }
    let mut text = String::new();
    writeln!(text, "n = {n}, q = {q}, d = {d}, sigma = {sigma}, gnorm = {gnorm}").unwrap();
    writeln!(text, "{:<8} {:>22} {:>22}  condition eta*sqrt(d)*sigma < gnorm", "rule", "eta", "sin_alpha").unwrap();

    let mut rows = Vec::new();
    for rule in BOUNDED_RULES {
        let bound = bound_for(rule, n, q, d, sigma, gnorm).and_then(|b| b.ok());
        let status = match bound {
            Some(b) if b.satisfiable => Status::Satisfied,
            Some(_) => Status::Violated,
            None => Status::NotApplicable,
        };
        match bound {
            Some(b) => writeln!(text, "{:<8} {:>22} {:>22}  {}", rule.name(), b.eta, b.sin_alpha, status.as_str()),
            None => writeln!(text, "{:<8} {:>22} {:>22}  {}", rule.name(), "-", "-", status.as_str()),
        }
        .unwrap();
        rows.push(BoundRow { rule, bound, status });
    }

    // g spread evenly over all dimensions.
    let g = vec![gnorm / (d as f64).sqrt(); d];
    let mut checks = Vec::new();
    let mean_ce = build_mean_counterexample(&g, n)?;
    checks.push(CounterexampleCheck {
        name: "mean counterexample, mean".into(),
        inner_product: Some(dot(&agg_mean(&mean_ce), &g)),
    });
    let selection = build_selection_counterexample(&g, n, d).ok();
    checks.push(CounterexampleCheck {
        name: "selection counterexample, medoid".into(),
        inner_product: selection.as_ref().map(|m| dot(&agg_medoid(m), &g)),
    });
    checks.push(CounterexampleCheck {
        name: "selection counterexample, krum".into(),
        inner_product: selection.as_ref().and_then(|m| agg_krum(m, q).ok()).map(|out| dot(&out, &g)),
    });
    for check in &checks {
        match check.inner_product {
            Some(ip) => writeln!(
                text,
                "{}: <Aggr, g> = {ip:e}  {}",
                check.name,
                if check.passed() { "PASS" } else { "FAIL" }
            ),
            None => writeln!(text, "{}: N/A", check.name),
        }
        .unwrap();
    }
    Ok(VerifyReport { rows, checks, text })
}
