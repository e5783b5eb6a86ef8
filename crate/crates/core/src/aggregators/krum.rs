use crate::error::{Error, Result};
use crate::grad::{select_nth_by, squared_distance, GradMatrix, GradVector};

fn check_krum_domain(n: usize, q: usize) -> Result<usize> {
    if 2 * q + 2 >= n {
        return Err(Error::param(format!("krum requires 2q + 2 < n, got q = {q}, n = {n}")));
    }
    Ok(n - q - 2)
}

/// Krum score of every row: the sum of squared distances to its n - q - 2
/// nearest other rows.
///
/// The selected distances are summed in ascending order, so a score depends
/// only on the multiset of distances and not on row order.
pub fn krum_scores(m: &GradMatrix, q: usize) -> Result<Vec<f64>> {
    let n = m.n();
    let k = check_krum_domain(n, q)?;
    let mut dists = Vec::with_capacity(n - 1);
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let ri = m.row(i);
        dists.clear();
        dists.extend(
            m.rows()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, rj)| squared_distance(ri, rj)),
        );
        select_nth_by(&mut dists, k - 1, f64::total_cmp);
        let nearest = &mut dists[..k];
        nearest.sort_unstable_by(f64::total_cmp);
        scores.push(nearest.iter().sum());
    }
    Ok(scores)
}

/// Row indices ordered by (score, index).
fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

pub fn agg_krum(m: &GradMatrix, q: usize) -> Result<GradVector> {
    let scores = krum_scores(m, q)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.total_cmp(&scores[best]).is_lt() {
            best = i;
        }
    }
    Ok(GradVector::new(m.row(best).to_vec()))
}

/// Indices of the `mk` lowest-scoring rows, best first.
pub fn multikrum_selection(m: &GradMatrix, q: usize, mk: usize) -> Result<Vec<usize>> {
    let n = m.n();
    check_krum_domain(n, q)?;
    if mk == 0 || mk > n - q {
        return Err(Error::param(format!(
            "multikrum_m must lie in 1..={}, got {mk}",
            n - q
        )));
    }
    let scores = krum_scores(m, q)?;
    let mut order = rank_by_score(&scores);
    order.truncate(mk);
    Ok(order)
}

/// Average of the `mk` rows with the smallest Krum scores. Scores are
/// computed once on the full matrix.
pub fn agg_multikrum(m: &GradMatrix, q: usize, mk: usize) -> Result<GradVector> {
    let picked = multikrum_selection(m, q, mk)?;
    let mut acc = vec![0.0; m.d()];
    for &i in &picked {
        for (a, x) in acc.iter_mut().zip(m.row(i)) {
            *a += x;
        }
    }
    let count = picked.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(GradVector::new(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> GradMatrix {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        GradMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn score_examples() {
        assert_eq!(krum_scores(&col(&[0.0, 1.0, 2.0, 10.0]), 0).unwrap(), vec![5.0, 2.0, 5.0, 145.0]);
        assert_eq!(krum_scores(&col(&[0.0, 0.0, 0.0, 1.0]), 0).unwrap(), vec![0.0, 0.0, 0.0, 2.0]);
        assert_eq!(krum_scores(&col(&[4.0; 6]), 1).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn krum_examples() {
        assert_eq!(agg_krum(&col(&[0.0, 1.0, 2.0, 10.0]), 0).unwrap().as_slice(), &[1.0]);
        let m = GradMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![5.0, 5.0],
            vec![0.05, 0.0],
        ])
        .unwrap();
        assert_eq!(agg_krum(&m, 0).unwrap().as_slice(), &[0.05, 0.0]);
        let same = GradMatrix::from_rows(&[[1.0, 2.0]; 5]).unwrap();
        assert_eq!(agg_krum(&same, 1).unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(krum_scores(&col(&[0.0, 1.0, 2.0]), 1), Err(Error::Parameter(_))));
        assert!(agg_krum(&col(&[0.0, 1.0, 2.0]), 0).is_ok());
        assert!(agg_multikrum(&col(&[0.0, 1.0, 2.0, 3.0]), 0, 5).is_err());
        assert!(agg_multikrum(&col(&[0.0, 1.0, 2.0, 3.0]), 0, 0).is_err());
    }

    #[test]
    fn multikrum_examples() {
        let m = col(&[0.0, 1.0, 2.0, 10.0]);
        assert_eq!(agg_multikrum(&m, 0, 2).unwrap().as_slice(), &[0.5]);
        assert_eq!(agg_multikrum(&m, 0, 1).unwrap(), agg_krum(&m, 0).unwrap());
        let same = GradMatrix::from_rows(&[[-3.0, 0.25]; 7]).unwrap();
        assert_eq!(agg_multikrum(&same, 2, 5).unwrap().as_slice(), &[-3.0, 0.25]);
    }
}
