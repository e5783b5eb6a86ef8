use byzmed::aggregators::mean_around_median;
use byzmed::grad::median_1d;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A column of n values, at most ceil(n/2) - 1 of them adversarial.
/// Returns the column, the correct values and q.
fn adversarial_column(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, usize) {
    let n: usize = rng.random_range(1..=60);
    let limit = n.div_ceil(2) - 1;
    let q = rng.random_range(0..=limit);
    let mut column: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bad = sample(rng, n, q).into_vec();
    let (lo, hi) = column.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let one_sided = rng.random_bool(0.5);
    for &i in &bad {
        column[i] = match rng.random_range(0..3) {
            0 => {
                let mag = 10f64.powf(rng.random_range(0.0..30.0));
                if one_sided || rng.random_bool(0.5) { mag } else { -mag }
            }
            // Just outside the correct range.
            1 => hi + rng.random_range(0.0..1e-3),
            _ => lo - rng.random_range(0.0..1e-3),
        };
    }
    let correct = (0..n).filter(|i| !bad.contains(i)).map(|i| column[i]).collect();
    (column, correct, q)
}

#[test]
fn median_lies_within_correct_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10_000 {
        let (column, correct, _) = adversarial_column(&mut rng);
        let m = median_1d(&column).unwrap();
        let lo = correct.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = correct.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= m && m <= hi, "{m} outside [{lo}, {hi}] for {column:?}");
    }
}

#[test]
fn mean_around_median_stays_near_median() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10_000 {
        let (column, correct, q) = adversarial_column(&mut rng);
        let mu = median_1d(&column).unwrap();
        let rho = mean_around_median(&column, q).unwrap();
        let bound = correct.iter().map(|u| (u - mu).abs()).fold(0.0, f64::max);
        assert!((rho - mu).abs() <= bound * (1.0 + 1e-12), "|{rho} - {mu}| > {bound}");
    }
}
