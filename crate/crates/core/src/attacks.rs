//! Corruption injectors.
//!
//! Gaussian and omniscient attacks replace whole worker rows (the classic
//! model). Bit-flip, gambler and the diagonal worst case corrupt individual
//! coordinates with a per-column budget (the generalized model).

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{from_wire, to_wire, GradMatrix, WireValue};
use crate::rng::{stream, Purpose, StreamRng};

pub const DEFAULT_OMNISCIENT_SCALE: f64 = 1e20;
pub const DEFAULT_BIT_POSITIONS: [u8; 4] = [22, 30, 31, 32];
pub const DEFAULT_BITFLIP_DIMS: usize = 1000;
/// Magnitude used by [`dimensional_worst_case`].
pub const WORST_CASE_MAGNITUDE: f64 = 1e20;

/// Which workers are Byzantine in a round, for row-replacing attacks.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByzantineSelection {
    /// Workers `0..q`, every round.
    #[default]
    Fixed,
    /// A fresh uniformly random q-subset each round.
    Resampled,
    /// An explicit set of worker indices, every round.
    Workers(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AttackKind {
    #[serde(rename = "none")]
    NoAttack,
    Gaussian {
        q: usize,
        sigma: f64,
    },
    Omniscient {
        q: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    #[serde(rename = "bitflip")]
    BitFlip {
        /// Leading dimensions attacked; `None` means min(1000, d).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_dims: Option<usize>,
        #[serde(default = "default_bits")]
        bit_positions: Vec<u8>,
        /// Corrupt worker 0 in every column instead of rotating the victim.
        #[serde(default)]
        same_worker: bool,
    },
    Gambler {
        /// `None` inherits the experiment's server count.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_servers: Option<usize>,
        #[serde(default)]
        target_server: usize,
        prob: f64,
        factor: f64,
    },
}

fn default_scale() -> f64 {
    DEFAULT_OMNISCIENT_SCALE
}

fn default_bits() -> Vec<u8> {
    DEFAULT_BIT_POSITIONS.to_vec()
}

impl AttackKind {
    pub const NAMES: [&'static str; 5] = ["none", "gaussian", "omniscient", "bitflip", "gambler"];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::NoAttack => "none",
            AttackKind::Gaussian { .. } => "gaussian",
            AttackKind::Omniscient { .. } => "omniscient",
            AttackKind::BitFlip { .. } => "bitflip",
            AttackKind::Gambler { .. } => "gambler",
        }
    }

    pub fn parameters(name: &str) -> &'static str {
        match name {
            "none" => "(none)",
            "gaussian" => "q, sigma; selection = fixed | resampled | { workers = [..] }",
            "omniscient" => "q, scale (default 1e20); selection = fixed | resampled | { workers = [..] }",
            "bitflip" => "num_dims (default min(1000, d)), bit_positions (default [22, 30, 31, 32]), same_worker (default false)",
            "gambler" => "num_servers (default: experiment num_servers), target_server (default 0), prob, factor",
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    #[serde(default, skip_serializing_if = "is_default_selection")]
    pub selection: ByzantineSelection,
}

fn is_default_selection(s: &ByzantineSelection) -> bool {
    *s == ByzantineSelection::Fixed
}

impl From<AttackKind> for AttackSpec {
    fn from(kind: AttackKind) -> Self {
        AttackSpec {
            kind,
            selection: ByzantineSelection::Fixed,
        }
    }
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackKind::NoAttack.into()
    }

    pub fn gaussian(q: usize, sigma: f64) -> Self {
        AttackKind::Gaussian { q, sigma }.into()
    }

    pub fn omniscient(q: usize, scale: f64) -> Self {
        AttackKind::Omniscient { q, scale }.into()
    }

    pub fn bitflip(num_dims: usize) -> Self {
        AttackKind::BitFlip {
            num_dims: Some(num_dims),
            bit_positions: default_bits(),
            same_worker: false,
        }
        .into()
    }

    pub fn gambler(num_servers: usize, target_server: usize, prob: f64, factor: f64) -> Self {
        AttackKind::Gambler {
            num_servers: Some(num_servers),
            target_server,
            prob,
            factor,
        }
        .into()
    }

    pub fn with_selection(mut self, selection: ByzantineSelection) -> Self {
        self.selection = selection;
        self
    }

    /// Number of corrupted worker rows for row-replacing attacks.
    pub fn byzantine_rows(&self) -> usize {
        match self.kind {
            AttackKind::Gaussian { q, .. } | AttackKind::Omniscient { q, .. } => match &self.selection {
                ByzantineSelection::Workers(w) => w.len(),
                _ => q,
            },
            _ => 0,
        }
    }

    /// Checks the spec against an n×d round matrix.
    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        match &self.kind {
            AttackKind::NoAttack => Ok(()),
            AttackKind::Gaussian { q, sigma } => {
                if !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::param(format!("gaussian sigma must be finite and >= 0, got {sigma}")));
                }
                self.validate_selection(*q, n)
            }
            AttackKind::Omniscient { q, .. } => self.validate_selection(*q, n),
            AttackKind::BitFlip {
                num_dims,
                bit_positions,
                ..
            } => {
                let dims = num_dims.unwrap_or(DEFAULT_BITFLIP_DIMS.min(d));
                if dims > d {
                    return Err(Error::param(format!("bitflip num_dims = {dims} exceeds d = {d}")));
                }
                bit_mask(bit_positions).map(|_| ())
            }
            AttackKind::Gambler {
                num_servers,
                target_server,
                prob,
                ..
            } => {
                let servers = num_servers.unwrap_or(1);
                if servers == 0 {
                    return Err(Error::param("gambler num_servers must be >= 1"));
                }
                if *target_server >= servers {
                    return Err(Error::param(format!(
                        "gambler target_server = {target_server} must be < num_servers = {servers}"
                    )));
                }
                if !(0.0..=1.0).contains(prob) {
                    return Err(Error::param(format!("gambler prob must lie in [0, 1], got {prob}")));
                }
                Ok(())
            }
        }
    }

    fn validate_selection(&self, q: usize, n: usize) -> Result<()> {
        if q > n {
            return Err(Error::param(format!("q = {q} exceeds worker count n = {n}")));
        }
        if let ByzantineSelection::Workers(w) = &self.selection {
            if w.len() != q {
                return Err(Error::param(format!(
                    "selection lists {} workers but q = {q}",
                    w.len()
                )));
            }
            let mut seen = vec![false; n];
            for &i in w {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::param(format!("invalid or repeated Byzantine worker index {i}")));
                }
            }
        }
        Ok(())
    }
}

/// Per-round attack context. The random stream is a pure function of
/// (seed, round); the omniscient attacker reads the pre-attack matrix passed
/// to [`apply_attack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackContext {
    pub seed: u64,
    pub round: u64,
}

impl AttackContext {
    pub fn new(seed: u64, round: u64) -> Self {
        AttackContext { seed, round }
    }

    pub fn rng(&self) -> StreamRng {
        stream(self.seed, self.round, Purpose::Attack)
    }
}

fn byzantine_indices(selection: &ByzantineSelection, q: usize, n: usize, rng: &mut StreamRng) -> Vec<usize> {
    match selection {
        ByzantineSelection::Fixed => (0..q).collect(),
        ByzantineSelection::Resampled => {
            let mut picked = index::sample(rng, n, q).into_vec();
            picked.sort_unstable();
            picked
        }
        ByzantineSelection::Workers(w) => {
            let mut picked = w.clone();
            picked.sort_unstable();
            picked
        }
    }
}

/// Applies `spec` to the correct matrix `m` and returns the corrupted copy.
pub fn apply_attack(spec: &AttackSpec, ctx: &AttackContext, m: &GradMatrix) -> Result<GradMatrix> {
    let (n, d) = (m.n(), m.d());
    spec.validate(n, d)?;
    let mut rng = ctx.rng();
    let mut out = m.clone();
    match &spec.kind {
        AttackKind::NoAttack => {}
        AttackKind::Gaussian { q, sigma } => {
            let normal = Normal::new(0.0, *sigma).map_err(|e| Error::param(e.to_string()))?;
            for i in byzantine_indices(&spec.selection, *q, n, &mut rng) {
                for v in out.row_mut(i) {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        AttackKind::Omniscient { q, scale } => {
            let byz = byzantine_indices(&spec.selection, *q, n, &mut rng);
            let mut is_byz = vec![false; n];
            byz.iter().for_each(|&i| is_byz[i] = true);
            let mut correct_sum = vec![0.0; d];
            for (_, row) in m.rows().enumerate().filter(|(i, _)| !is_byz[*i]) {
                for (s, x) in correct_sum.iter_mut().zip(row) {
                    *s += x;
                }
            }
            let forged: Vec<f64> = correct_sum.iter().map(|s| -scale * s).collect();
            for i in byz {
                out.row_mut(i).copy_from_slice(&forged);
            }
        }
        AttackKind::BitFlip {
            num_dims,
            bit_positions,
            same_worker,
        } => {
            let mask = bit_mask(bit_positions)?;
            let dims = num_dims.unwrap_or(DEFAULT_BITFLIP_DIMS.min(d));
            for j in 0..dims {
                let victim = if *same_worker { 0 } else { j % n };
                let flipped = WireValue(to_wire(m.get(victim, j)).bits() ^ mask);
                out.set(victim, j, from_wire(flipped));
            }
        }
        AttackKind::Gambler {
            num_servers,
            target_server,
            prob,
            factor,
        } => {
            let ranges = partition_dims(d, num_servers.unwrap_or(1))?;
            let target = ranges[*target_server].clone();
            for i in 0..n {
                for j in target.clone() {
                    if rng.random::<f64>() < *prob {
                        out.set(i, j, m.get(i, j) * factor);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// XOR mask with bit `p - 1` set for every 1-based position `p`
/// (position 1 is the least significant bit, 32 the sign bit).
pub fn bit_mask(positions: &[u8]) -> Result<u32> {
    positions.iter().try_fold(0u32, |mask, &p| {
        if (1..=32).contains(&p) {
            Ok(mask | 1 << (p - 1))
        } else {
            Err(Error::param(format!("bit position {p} outside 1..=32")))
        }
    })
}

pub fn bitflip32(w: WireValue, bit_positions: &[u8]) -> Result<WireValue> {
    Ok(WireValue(w.bits() ^ bit_mask(bit_positions)?))
}

/// Splits `0..d` into `num_servers` contiguous ranges whose sizes differ by
/// at most one, larger ranges first.
pub fn partition_dims(d: usize, num_servers: usize) -> Result<Vec<Range<usize>>> {
    if num_servers == 0 {
        return Err(Error::param("num_servers must be >= 1"));
    }
    let (base, extra) = (d / num_servers, d % num_servers);
    let mut start = 0;
    Ok((0..num_servers)
        .map(|s| {
            let len = base + usize::from(s < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Diagonal corruption: entry (i, i) of row i is replaced by a huge value of
/// the opposite sign to `g_estimate[i]`, so every row carries exactly one
/// Byzantine coordinate and every column at most one.
pub fn dimensional_worst_case(m: &GradMatrix, g_estimate: &[f64]) -> Result<GradMatrix> {
    let (n, d) = (m.n(), m.d());
    if n > d {
        return Err(Error::param(format!("diagonal corruption needs n <= d, got n = {n}, d = {d}")));
    }
    if g_estimate.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: g_estimate.len(),
        });
    }
    let mut out = m.clone();
    for (i, &g) in g_estimate.iter().enumerate().take(n) {
        out.set(i, i, -WORST_CASE_MAGNITUDE * g.signum() * g.abs().max(1.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> AttackContext {
        AttackContext::new(42, 7)
    }

    fn sample_matrix(n: usize, d: usize) -> GradMatrix {
        let data = (0..n * d).map(|k| ((k * 37 % 101) as f64 - 50.0) / 16.0).collect();
        GradMatrix::from_flat(data, n, d).unwrap()
    }

    #[test]
    fn no_attack_is_identity() {
        let m = sample_matrix(5, 8);
        assert_eq!(apply_attack(&AttackSpec::none(), &ctx(), &m).unwrap(), m);
    }

    #[test]
    fn omniscient_example() {
        let m = GradMatrix::from_rows(&[[1.0], [3.0], [0.5]]).unwrap();
        let spec = AttackSpec::omniscient(1, 2.0).with_selection(ByzantineSelection::Workers(vec![2]));
        let out = apply_attack(&spec, &ctx(), &m).unwrap();
        assert_eq!(out.column(0), vec![1.0, 3.0, -8.0]);
    }

    #[test]
    fn omniscient_rows_identical() {
        let m = sample_matrix(6, 4);
        let out = apply_attack(&AttackSpec::omniscient(3, 1e20), &ctx(), &m).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(1), out.row(2));
        for i in 3..6 {
            assert_eq!(out.row(i), m.row(i));
        }
    }

    #[test]
    fn gaussian_replaces_rows() {
        let m = sample_matrix(10, 50);
        let spec = AttackSpec::gaussian(4, 200.0).with_selection(ByzantineSelection::Resampled);
        let out = apply_attack(&spec, &ctx(), &m).unwrap();
        let changed: Vec<usize> = (0..10).filter(|&i| out.row(i) != m.row(i)).collect();
        assert_eq!(changed.len(), 4);
        for &i in &changed {
            assert!(out.row(i).iter().zip(m.row(i)).all(|(a, b)| a != b));
        }
        assert_eq!(apply_attack(&spec, &ctx(), &m).unwrap(), out);
    }

    #[test]
    fn gambler_example() {
        let m = GradMatrix::from_rows(&[[2.0, 1.0, 3.0, 4.0]]).unwrap();
        let out = apply_attack(&AttackSpec::gambler(2, 0, 1.0, -1e20), &ctx(), &m).unwrap();
        assert_eq!(out.row(0), &[-2.0e20, -1e20, 3.0, 4.0]);
    }

    #[test]
    fn bitflip_examples() {
        let one = to_wire(1.0);
        let flipped = bitflip32(one, &[22, 30, 31, 32]).unwrap();
        assert_eq!(bit_mask(&[22, 30, 31, 32]).unwrap(), 0xE020_0000);
        assert_eq!(flipped.bits(), 0xDFA0_0000);
        // sign set, exponent 0xBF (2^64), mantissa 1.25
        assert_eq!(from_wire(flipped), -1.25 * 2f64.powi(64));
        assert_eq!(bitflip32(one, &[]).unwrap(), one);
        assert_eq!(bitflip32(flipped, &[22, 30, 31, 32]).unwrap(), one);
        assert!(bitflip32(one, &[0]).is_err());
        assert!(bitflip32(one, &[33]).is_err());
    }

    #[test]
    fn bitflip_rotates_victims() {
        let m = sample_matrix(3, 7);
        let out = apply_attack(&AttackSpec::bitflip(5), &ctx(), &m).unwrap();
        for j in 0..7 {
            let changed: Vec<usize> = (0..3).filter(|&i| out.get(i, j) != m.get(i, j)).collect();
            if j < 5 {
                assert_eq!(changed, vec![j % 3]);
            } else {
                assert!(changed.is_empty());
            }
        }
        assert!(apply_attack(&AttackSpec::bitflip(8), &ctx(), &m).is_err());
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition_dims(10, 2).unwrap(), vec![0..5, 5..10]);
        assert_eq!(partition_dims(7, 3).unwrap(), vec![0..3, 3..5, 5..7]);
        assert_eq!(partition_dims(4, 4).unwrap(), vec![0..1, 1..2, 2..3, 3..4]);
        assert!(partition_dims(4, 0).is_err());
    }

    #[test]
    fn worst_case_examples() {
        let m = GradMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let out = dimensional_worst_case(&m, &[1.0, 1.0]).unwrap();
        assert_eq!(out.row(0), &[-1e20, 1.0]);
        assert_eq!(out.row(1), &[1.0, -1e20]);
        let single = GradMatrix::from_rows(&[[0.5]]).unwrap();
        assert_eq!(dimensional_worst_case(&single, &[-0.5]).unwrap().row(0), &[1e20]);
        let tall = GradMatrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(dimensional_worst_case(&tall, &[1.0]).is_err());
    }

    #[test]
    fn validation() {
        assert!(AttackSpec::gaussian(6, 1.0).validate(5, 3).is_err());
        assert!(AttackSpec::gambler(2, 2, 0.5, -1.0).validate(5, 3).is_err());
        assert!(AttackSpec::gambler(2, 1, 1.5, -1.0).validate(5, 3).is_err());
        let dup = AttackSpec::omniscient(2, 1.0).with_selection(ByzantineSelection::Workers(vec![1, 1]));
        assert!(dup.validate(5, 3).is_err());
    }
}
