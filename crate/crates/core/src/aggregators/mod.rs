//! Aggregation rules reducing one round's [`GradMatrix`] to a single vector.
//!
//! Every rule is a pure function of the matrix. Ties are always broken in
//! favour of the lowest worker index.

mod geomed;
mod krum;
mod median;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{distance, GradMatrix, GradVector};

pub use geomed::{agg_geomed, geomed_objective, GeoMedOutcome, weiszfeld};
pub use krum::{agg_krum, agg_multikrum, krum_scores, multikrum_selection};
pub use median::{agg_marmed, agg_meamed, mean_around_median};

pub const DEFAULT_GEOMED_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_GEOMED_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Mean,
    Medoid,
    Krum,
    MultiKrum,
    GeoMed,
    MarMed,
    MeaMed,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 7] = [
        AggregatorKind::Mean,
        AggregatorKind::Medoid,
        AggregatorKind::Krum,
        AggregatorKind::MultiKrum,
        AggregatorKind::GeoMed,
        AggregatorKind::MarMed,
        AggregatorKind::MeaMed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Medoid => "medoid",
            AggregatorKind::Krum => "krum",
            AggregatorKind::MultiKrum => "multikrum",
            AggregatorKind::GeoMed => "geomed",
            AggregatorKind::MarMed => "marmed",
            AggregatorKind::MeaMed => "meamed",
        }
    }

    /// Parameters the rule reads from [`AggregatorSpec`].
    pub fn parameters(self) -> &'static str {
        match self {
            AggregatorKind::Mean | AggregatorKind::Medoid | AggregatorKind::MarMed => "(none)",
            AggregatorKind::Krum => "q (2q + 2 < n)",
            AggregatorKind::MultiKrum => "q (2q + 2 < n), multikrum_m (default n - q)",
            AggregatorKind::GeoMed => "geomed_tolerance (default 1e-8), geomed_max_iters (default 200)",
            AggregatorKind::MeaMed => "q (0 <= q <= n - 1)",
        }
    }

    /// Rules whose output is always one of the input rows.
    pub fn selects_row(self) -> bool {
        matches!(self, AggregatorKind::Medoid | AggregatorKind::Krum)
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggregatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = AggregatorKind::ALL.iter().map(|k| k.name()).collect();
                Error::config(
                    "aggregator.kind",
                    format!("unknown aggregator `{s}`; valid kinds: {}", valid.join(", ")),
                )
            })
    }
}

impl<'de> Deserialize<'de> for AggregatorKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

/// Which rule to run and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    /// Estimated number of Byzantine workers (Krum, Multi-Krum, MeaMed).
    #[serde(default)]
    pub q: usize,
    #[serde(default = "default_geomed_tolerance")]
    pub geomed_tolerance: f64,
    #[serde(default = "default_geomed_max_iters")]
    pub geomed_max_iters: usize,
    /// Rows averaged by Multi-Krum; `None` means n - q.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multikrum_m: Option<usize>,
}

fn default_geomed_tolerance() -> f64 {
    DEFAULT_GEOMED_TOLERANCE
}

fn default_geomed_max_iters() -> usize {
    DEFAULT_GEOMED_MAX_ITERS
}

impl AggregatorSpec {
    pub fn new(kind: AggregatorKind) -> Self {
        AggregatorSpec {
            kind,
            q: 0,
            geomed_tolerance: DEFAULT_GEOMED_TOLERANCE,
            geomed_max_iters: DEFAULT_GEOMED_MAX_ITERS,
            multikrum_m: None,
        }
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.q = q;
        self
    }

    pub fn with_multikrum_m(mut self, m: usize) -> Self {
        self.multikrum_m = Some(m);
        self
    }

    pub fn with_geomed(mut self, tolerance: f64, max_iters: usize) -> Self {
        self.geomed_tolerance = tolerance;
        self.geomed_max_iters = max_iters;
        self
    }

    /// Checks the parameters against a worker count `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::param("worker count must be positive"));
        }
        match self.kind {
            AggregatorKind::Krum | AggregatorKind::MultiKrum => {
                if 2 * self.q + 2 >= n {
                    return Err(Error::param(format!(
                        "{} requires 2q + 2 < n, got q = {}, n = {n}",
                        self.kind, self.q
                    )));
                }
                if self.kind == AggregatorKind::MultiKrum {
                    let m = self.multikrum_m.unwrap_or(n - self.q);
                    if m == 0 || m > n - self.q {
                        return Err(Error::param(format!(
                            "multikrum_m must lie in 1..={}, got {m}",
                            n - self.q
                        )));
                    }
                }
            }
            AggregatorKind::MeaMed => {
                if self.q >= n {
                    return Err(Error::param(format!(
                        "meamed requires q <= n - 1, got q = {}, n = {n}",
                        self.q
                    )));
                }
            }
            AggregatorKind::GeoMed => {
                if !(self.geomed_tolerance >= 0.0) {
                    return Err(Error::param("geomed_tolerance must be >= 0"));
                }
                if self.geomed_max_iters == 0 {
                    return Err(Error::param("geomed_max_iters must be positive"));
                }
            }
            AggregatorKind::Mean | AggregatorKind::Medoid | AggregatorKind::MarMed => {}
        }
        Ok(())
    }

    /// Non-fatal note when `q` exceeds the range where the median rules'
    /// guarantees hold (q <= ceil(n/2) - 1). The rule still runs.
    pub fn resilience_warning(&self, n: usize) -> Option<String> {
        let limit = n.div_ceil(2).saturating_sub(1);
        match self.kind {
            AggregatorKind::MarMed | AggregatorKind::MeaMed if self.q > limit => Some(format!(
                "{}: q = {} exceeds ceil(n/2) - 1 = {limit}; resilience bound does not apply",
                self.kind, self.q
            )),
            _ => None,
        }
    }

    pub fn aggregate(&self, m: &GradMatrix) -> Result<GradVector> {
        self.validate(m.n())?;
        match self.kind {
            AggregatorKind::Mean => Ok(agg_mean(m)),
            AggregatorKind::Medoid => Ok(agg_medoid(m)),
            AggregatorKind::Krum => agg_krum(m, self.q),
            AggregatorKind::MultiKrum => {
                agg_multikrum(m, self.q, self.multikrum_m.unwrap_or(m.n() - self.q))
            }
            AggregatorKind::GeoMed => Ok(agg_geomed(m, self.geomed_tolerance, self.geomed_max_iters)),
            AggregatorKind::MarMed => Ok(agg_marmed(m)),
            AggregatorKind::MeaMed => agg_meamed(m, self.q),
        }
    }
}

/// Component-wise arithmetic mean of the rows.
pub fn agg_mean(m: &GradMatrix) -> GradVector {
    let mut acc = vec![0.0; m.d()];
    for row in m.rows() {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }
    let n = m.n() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    GradVector::new(acc)
}

/// Sum of Euclidean distances from row `i` to every row.
pub fn medoid_cost(m: &GradMatrix, i: usize) -> f64 {
    let ri = m.row(i);
    m.rows().map(|r| distance(ri, r)).sum()
}

/// The input row minimizing the total distance to all rows.
pub fn agg_medoid(m: &GradMatrix) -> GradVector {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for i in 0..m.n() {
        let cost = medoid_cost(m, i);
        if i == 0 || cost.total_cmp(&best_cost).is_lt() {
            best = i;
            best_cost = cost;
        }
    }
    GradVector::new(m.row(best).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> GradMatrix {
        GradMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(agg_mean(&mat(&[&[1.0, 1.0], &[3.0, 3.0]])).as_slice(), &[2.0, 2.0]);
        assert_eq!(agg_mean(&mat(&[&[5.0, -2.0]])).as_slice(), &[5.0, -2.0]);
        // one row cancels the others and flips the sign of g = [1]
        let out = agg_mean(&mat(&[&[1.0], &[1.0], &[-3.0]]));
        assert!((out[0] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn medoid_examples() {
        // distance sums 11, 10, 19
        assert_eq!(agg_medoid(&mat(&[&[0.0], &[1.0], &[10.0]])).as_slice(), &[1.0]);
        assert_eq!(agg_medoid(&mat(&[&[2.0, 2.0], &[2.0, 2.0]])).as_slice(), &[2.0, 2.0]);
        assert_eq!(
            agg_medoid(&mat(&[&[0.0, 0.0], &[0.0, 0.0], &[9.0, 9.0]])).as_slice(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn medoid_tie_goes_to_lowest_index() {
        let m = mat(&[&[3.0], &[-1.0], &[1.0]]);
        // costs: 6, 6, 4 -> index 2; drop the middle to force a tie
        assert_eq!(agg_medoid(&m).as_slice(), &[1.0]);
        let m = mat(&[&[3.0], &[-1.0]]);
        assert_eq!(agg_medoid(&m).as_slice(), &[3.0]);
    }

    #[test]
    fn parse_kind_lists_valid_names() {
        assert_eq!("meamed".parse::<AggregatorKind>().unwrap(), AggregatorKind::MeaMed);
        let err = "krumm".parse::<AggregatorKind>().unwrap_err().to_string();
        assert!(err.contains("aggregator.kind"), "{err}");
        assert!(err.contains("multikrum") && err.contains("geomed"), "{err}");
    }

    #[test]
    fn validate_domains() {
        let krum = AggregatorSpec::new(AggregatorKind::Krum).with_q(1);
        assert!(krum.validate(4).is_err());
        assert!(krum.validate(5).is_ok());
        let mk = AggregatorSpec::new(AggregatorKind::MultiKrum).with_q(1).with_multikrum_m(5);
        assert!(mk.validate(5).is_err());
        assert!(mk.clone().with_multikrum_m(4).validate(5).is_ok());
        assert!(AggregatorSpec::new(AggregatorKind::MeaMed).with_q(3).validate(3).is_err());
    }

    #[test]
    fn warning_above_half() {
        let s = AggregatorSpec::new(AggregatorKind::MarMed).with_q(10);
        assert!(s.resilience_warning(20).is_some());
        assert!(s.clone().with_q(9).resilience_warning(20).is_none());
        assert!(AggregatorSpec::new(AggregatorKind::Mean).with_q(19).resilience_warning(20).is_none());
    }

    #[test]
    fn everything_is_identity_at_one_worker() {
        let m = mat(&[&[1.5, -2.0, 7.0]]);
        for kind in AggregatorKind::ALL {
            let spec = AggregatorSpec::new(kind);
            match kind {
                // 2q + 2 < 1 is impossible
                AggregatorKind::Krum | AggregatorKind::MultiKrum => assert!(spec.aggregate(&m).is_err()),
                _ => assert_eq!(spec.aggregate(&m).unwrap().as_slice(), m.row(0), "{kind}"),
            }
        }
    }
}
