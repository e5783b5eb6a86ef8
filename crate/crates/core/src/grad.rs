//! Gradient containers, order statistics, and the 32-bit wire representation.
//!
//! All aggregation arithmetic is done in `f64`. The only place a gradient is
//! narrowed to single precision is [`WireValue`], which exists so bit-level
//! corruption can be applied exactly as it would be to a transmitted `f32`.

use std::cmp::Ordering;
use std::ops::{Deref, DerefMut, Index};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One worker's gradient (or an aggregate of several).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn new(values: Vec<f64>) -> Self {
        GradVector(values)
    }

    pub fn zeros(d: usize) -> Self {
        GradVector(vec![0.0; d])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl From<Vec<f64>> for GradVector {
    fn from(values: Vec<f64>) -> Self {
        GradVector(values)
    }
}

impl Deref for GradVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// The n×d matrix of gradients received in one round, stored row-major.
///
/// Row `i` is the vector sent by worker `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl GradMatrix {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Contract("gradient matrix needs at least one row".into()));
        }
        let d = rows[0].as_ref().len();
        if d == 0 {
            return Err(Error::Contract("gradient dimension must be positive".into()));
        }
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(GradMatrix { data, n, d })
    }

    pub fn from_flat(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Contract(format!("invalid shape {n}x{d}")));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                actual: data.len(),
            });
        }
        Ok(GradMatrix { data, n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.d + j] = value;
    }

    /// Copies column `j` into `out`, replacing its contents.
    pub fn column_into(&self, j: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.data[j..].iter().step_by(self.d).copied());
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n);
        self.column_into(j, &mut out);
        out
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Returns a copy with rows reordered so that new row `k` is old row `perm[k]`.
    pub fn permute_rows(&self, perm: &[usize]) -> GradMatrix {
        assert_eq!(perm.len(), self.n, "permutation length");
        let mut data = Vec::with_capacity(self.data.len());
        for &i in perm {
            data.extend_from_slice(self.row(i));
        }
        GradMatrix { data, n: self.n, d: self.d }
    }
}

impl Index<(usize, usize)> for GradMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.d + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = x - y;
            t * t
        })
        .sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

// SplitMix64; only used to pick quickselect pivots.
struct PivotRng(u64);

impl PivotRng {
    const SEED: u64 = 0x2545_F491_4F6C_DD1D;

    fn for_len(len: usize) -> Self {
        PivotRng(Self::SEED ^ (len as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn below(&mut self, bound: usize) -> usize {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        ((z as u128 * bound as u128) >> 64) as usize
    }
}

/// Randomized quickselect with a three-way partition.
///
/// On return `items[k]` holds the element of rank `k` under `cmp`, everything
/// before it compares `<=` and everything after compares `>=`. Runs in
/// expected linear time; the pivot stream is fixed so results and running
/// time are reproducible.
///
/// Panics if `k >= items.len()`.
pub fn select_nth_by<T, F>(items: &mut [T], k: usize, mut cmp: F)
where
    F: FnMut(&T, &T) -> Ordering,
{
    assert!(k < items.len(), "rank {k} out of range for length {}", items.len());
    let mut rng = PivotRng::for_len(items.len());
    let (mut lo, mut hi) = (0, items.len());
    while hi - lo > 1 {
        let p = lo + rng.below(hi - lo);
        items.swap(lo, p);
        // items[lt..i] all compare equal to the pivot; items[lt] is one of them.
        let (mut lt, mut i, mut gt) = (lo, lo + 1, hi);
        while i < gt {
            match cmp(&items[i], &items[lt]) {
                Ordering::Less => {
                    items.swap(lt, i);
                    lt += 1;
                    i += 1;
                }
                Ordering::Greater => {
                    gt -= 1;
                    items.swap(i, gt);
                }
                Ordering::Equal => i += 1,
            }
        }
        if k < lt {
            hi = lt;
        } else if k >= gt {
            lo = gt;
        } else {
            return;
        }
    }
}

/// In-place variant of [`select_kth`]; reorders `values`.
pub fn select_kth_in_place(values: &mut [f64], k: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("select_kth on empty input".into()));
    }
    if k >= values.len() {
        return Err(Error::Contract(format!(
            "rank {k} out of range for {} values",
            values.len()
        )));
    }
    select_nth_by(values, k, f64::total_cmp);
    Ok(values[k])
}

/// Returns the value that would sit at index `k` after an ascending sort.
/// The caller's slice is left untouched.
pub fn select_kth(values: &[f64], k: usize) -> Result<f64> {
    let mut scratch = values.to_vec();
    select_kth_in_place(&mut scratch, k)
}

/// Rank of the median used throughout: the lower middle order statistic.
pub fn median_rank(len: usize) -> usize {
    (len - 1) / 2
}

/// One-dimensional median. For even lengths this is the lower of the two
/// middle values, so the result is always an element of the input.
pub fn median_1d(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("median of empty input".into()));
    }
    select_kth(values, median_rank(values.len()))
}

/// In-place median; reorders `values`.
pub fn median_1d_in_place(values: &mut [f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("median of empty input".into()));
    }
    let k = median_rank(values.len());
    select_kth_in_place(values, k)
}

/// Bit pattern of an IEEE-754 single-precision scalar as it travels on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WireValue(pub u32);

impl WireValue {
    pub fn bits(self) -> u32 {
        self.0
    }
}

/// Rounds to the nearest `f32` and returns its bit pattern.
pub fn to_wire(x: f64) -> WireValue {
    WireValue((x as f32).to_bits())
}

pub fn from_wire(w: WireValue) -> f64 {
    f64::from(f32::from_bits(w.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sorted(values: &[f64]) -> Vec<f64> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_kth(&[5.0, 1.0, 4.0, 2.0, 3.0], 2).unwrap(), 3.0);
        assert_eq!(select_kth(&[7.0, 7.0, 7.0], 1).unwrap(), 7.0);
        let input = [3.0, -1.0, 9.0, 3.0, 0.0, 3.0];
        assert_eq!(sorted(&input)[3], 3.0);
        assert_eq!(select_kth(&input, 3).unwrap(), 3.0);
    }

    #[test]
    fn select_leaves_input_untouched() {
        let input = vec![4.0, 3.0, 2.0, 1.0];
        let _ = select_kth(&input, 0).unwrap();
        assert_eq!(input, vec![4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn select_rejects_bad_rank() {
        assert!(matches!(select_kth(&[], 0), Err(Error::Contract(_))));
        assert!(matches!(select_kth(&[1.0, 2.0], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_1d(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 3.0);
        assert_eq!(median_1d(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.0);
        let input = [10.0, -5.0, 0.0, 7.0, 7.0];
        assert_eq!(sorted(&input)[2], 7.0);
        assert_eq!(median_1d(&input).unwrap(), 7.0);
        assert!(median_1d(&[]).is_err());
    }

    #[test]
    fn wire_examples() {
        assert_eq!(to_wire(1.0).bits(), 0x3F80_0000);
        assert_eq!(to_wire(0.0).bits(), 0);
        assert_eq!(from_wire(WireValue(0xC000_0000)), -2.0);
    }

    #[test]
    fn matrix_shape_checks() {
        assert!(GradMatrix::from_rows::<Vec<f64>>(&[]).is_err());
        assert!(GradMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let m = GradMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.column(1), vec![2.0, 4.0]);
        assert_eq!(m[(1, 0)], 3.0);
    }

    proptest! {
        #[test]
        fn select_matches_sort(values in prop::collection::vec(-1e6f64..1e6, 1..200), k in any::<prop::sample::Index>()) {
            let k = k.index(values.len());
            prop_assert_eq!(select_kth(&values, k).unwrap(), sorted(&values)[k]);
        }

        #[test]
        fn select_with_duplicates(values in prop::collection::vec(-3i32..3, 1..200), k in any::<prop::sample::Index>()) {
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            let k = k.index(values.len());
            prop_assert_eq!(select_kth(&values, k).unwrap(), sorted(&values)[k]);
        }

        #[test]
        fn median_is_lower_middle(values in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            let m = median_1d(&values).unwrap();
            prop_assert!(values.contains(&m));
            let half = values.len() / 2;
            prop_assert!(values.iter().filter(|&&v| v < m).count() <= half);
            prop_assert!(values.iter().filter(|&&v| v > m).count() <= half);
        }

        #[test]
        fn wire_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            let back = from_wire(to_wire(x));
            let single = f64::from(x as f32);
            prop_assert!(back == single || (back.is_nan() && single.is_nan()));
        }

        #[test]
        fn wire_exact_for_f32(x in any::<f32>().prop_filter("finite", |x| x.is_finite())) {
            prop_assert_eq!(from_wire(to_wire(f64::from(x))), f64::from(x));
        }
    }
}
