//! Approximate geometric median via Weiszfeld iteration.
//!
//! Iterates that land on an input row use the Vardi-Zhang step: the plain
//! Weiszfeld map is blended with the current point according to how many rows
//! coincide with it, and the iteration stops at that row when the remaining
//! rows' pull is too weak to leave it (the row is then the exact optimum).

use crate::grad::{distance, GradMatrix, GradVector};

use super::agg_mean;

const MAX_EXTRAPOLATION: f64 = 1024.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GeoMedOutcome {
    pub point: GradVector,
    pub objective: f64,
    pub iterations: usize,
}

/// Sum of Euclidean distances from `point` to every row.
pub fn geomed_objective(m: &GradMatrix, point: &[f64]) -> f64 {
    m.rows().map(|r| distance(point, r)).sum()
}

/// Runs Weiszfeld from the coordinate-wise mean until the relative
/// improvement of the objective drops below `tol` or `max_iters` steps ran.
pub fn weiszfeld(m: &GradMatrix, tol: f64, max_iters: usize) -> GeoMedOutcome {
    let d = m.d();
    if m.n() == 1 {
        return GeoMedOutcome {
            point: GradVector::new(m.row(0).to_vec()),
            objective: 0.0,
            iterations: 0,
        };
    }

    let mut y = agg_mean(m).into_inner();
    let mut dists = vec![0.0; m.n()];
    let mut objective = fill_distances(m, &y, &mut dists);
    let mut best = (y.clone(), objective);
    // rows closer than this to the iterate count as coinciding with it
    let coincide = 1e-12 * (objective / m.n() as f64).max(f64::MIN_POSITIVE);

    let mut numer = vec![0.0; d];
    let mut pull = vec![0.0; d];
    let mut iterations = 0;
    while iterations < max_iters && objective > 0.0 && objective.is_finite() {
        iterations += 1;
        numer.iter_mut().for_each(|v| *v = 0.0);
        pull.iter_mut().for_each(|v| *v = 0.0);
        let mut denom = 0.0;
        let mut coinciding = 0usize;
        for (row, &dist) in m.rows().zip(&dists) {
            if dist <= coincide {
                coinciding += 1;
                continue;
            }
            let w = 1.0 / dist;
            denom += w;
            for ((nu, p), (&x, &yc)) in numer.iter_mut().zip(pull.iter_mut()).zip(row.iter().zip(&y)) {
                *nu += w * x;
                *p += w * (x - yc);
            }
        }
        if denom == 0.0 {
            break;
        }

        let next: Vec<f64> = if coinciding == 0 {
            numer.iter().map(|v| v / denom).collect()
        } else {
            let strength = pull.iter().map(|p| p * p).sum::<f64>().sqrt();
            let multiplicity = coinciding as f64;
            if strength <= multiplicity {
                // the coinciding row is optimal
                break;
            }
            let beta = multiplicity / strength;
            numer
                .iter()
                .zip(&y)
                .map(|(v, &yc)| (1.0 - beta) * (v / denom) + beta * yc)
                .collect()
        };

        // Extrapolate along the Weiszfeld step while the objective keeps falling.
        let step: Vec<f64> = next.iter().zip(&y).map(|(a, b)| a - b).collect();
        let mut next_objective = fill_distances(m, &next, &mut dists);
        let mut next = next;
        let mut lambda = 1.0;
        while lambda < MAX_EXTRAPOLATION {
            lambda *= 2.0;
            let trial: Vec<f64> = y.iter().zip(&step).map(|(a, s)| a + lambda * s).collect();
            let trial_objective = geomed_objective(m, &trial);
            if !(trial_objective < next_objective) {
                break;
            }
            next = trial;
            next_objective = trial_objective;
        }
        if !(next_objective < objective) {
            break;
        }
        fill_distances(m, &next, &mut dists);
        let improvement = (objective - next_objective) / objective;
        y = next;
        objective = next_objective;
        best = (y.clone(), objective);
        if improvement < tol {
            break;
        }
    }

    if let Some(row) = optimal_nearby_row(m, &best.0, coincide) {
        let row_objective = geomed_objective(m, m.row(row));
        if row_objective <= best.1 {
            best = (m.row(row).to_vec(), row_objective);
        }
    }

    GeoMedOutcome {
        point: GradVector::new(best.0),
        objective: best.1,
        iterations,
    }
}

/// The row nearest to `y`, if it satisfies the optimality condition of a
/// data point: the unit vectors towards all other rows sum to a vector no
/// longer than the number of rows sitting at that point.
fn optimal_nearby_row(m: &GradMatrix, y: &[f64], coincide: f64) -> Option<usize> {
    let nearest = (0..m.n())
        .map(|i| (distance(y, m.row(i)), i))
        .min_by(|a, b| a.0.total_cmp(&b.0))?
        .1;
    let at = m.row(nearest);
    let mut pull = vec![0.0; m.d()];
    let mut multiplicity = 0usize;
    for row in m.rows() {
        let dist = distance(at, row);
        if dist <= coincide {
            multiplicity += 1;
            continue;
        }
        for (p, (&x, &a)) in pull.iter_mut().zip(row.iter().zip(at)) {
            *p += (x - a) / dist;
        }
    }
    let strength = pull.iter().map(|p| p * p).sum::<f64>().sqrt();
    (strength <= multiplicity as f64).then_some(nearest)
}

fn fill_distances(m: &GradMatrix, y: &[f64], out: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (o, row) in out.iter_mut().zip(m.rows()) {
        *o = distance(y, row);
        total += *o;
    }
    total
}

/// (1+ε)-approximate geometric median of the rows.
pub fn agg_geomed(m: &GradMatrix, tol: f64, max_iters: usize) -> GradVector {
    weiszfeld(m, tol, max_iters).point
}
