use crate::error::{Error, Result};
use crate::grad::{median_1d_in_place, select_nth_by, GradMatrix, GradVector};

/// Coordinate-wise (marginal) median. Each output component is the lower
/// median of the corresponding column, computed by selection in O(n).
pub fn agg_marmed(m: &GradMatrix) -> GradVector {
    let mut column = Vec::with_capacity(m.n());
    let out = (0..m.d())
        .map(|j| {
            m.column_into(j, &mut column);
            median_1d_in_place(&mut column).expect("columns are non-empty")
        })
        .collect();
    GradVector::new(out)
}

struct MeaMedScratch {
    sorted: Vec<f64>,
    keyed: Vec<(f64, usize)>,
}

impl MeaMedScratch {
    fn new(n: usize) -> Self {
        MeaMedScratch {
            sorted: Vec::with_capacity(n),
            keyed: Vec::with_capacity(n),
        }
    }

    fn reduce(&mut self, column: &[f64], q: usize) -> f64 {
        let n = column.len();
        self.sorted.clear();
        self.sorted.extend_from_slice(column);
        let mu = median_1d_in_place(&mut self.sorted).expect("columns are non-empty");

        let keep = n - q;
        self.keyed.clear();
        self.keyed
            .extend(column.iter().enumerate().map(|(i, &v)| ((v - mu).abs(), i)));
        select_nth_by(&mut self.keyed, keep - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let sum: f64 = self.keyed[..keep].iter().map(|&(_, i)| column[i]).sum();
        sum / keep as f64
    }
}

/// Mean of the `n - q` values of `column` nearest its median (ties by index).
pub fn mean_around_median(column: &[f64], q: usize) -> Result<f64> {
    if column.is_empty() {
        return Err(Error::Contract("mean-around-median of empty input".into()));
    }
    if q >= column.len() {
        return Err(Error::param(format!(
            "meamed requires q <= n - 1, got q = {q}, n = {}",
            column.len()
        )));
    }
    Ok(MeaMedScratch::new(column.len()).reduce(column, q))
}

/// Coordinate-wise mean around the median: for every column, the average of
/// the `n - q` entries closest to that column's median.
pub fn agg_meamed(m: &GradMatrix, q: usize) -> Result<GradVector> {
    let n = m.n();
    if q >= n {
        return Err(Error::param(format!("meamed requires q <= n - 1, got q = {q}, n = {n}")));
    }
    let mut scratch = MeaMedScratch::new(n);
    let mut column = Vec::with_capacity(n);
    let out = (0..m.d())
        .map(|j| {
            m.column_into(j, &mut column);
            scratch.reduce(&column, q)
        })
        .collect();
    Ok(GradVector::new(out))
}
