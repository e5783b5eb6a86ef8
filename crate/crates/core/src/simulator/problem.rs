use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::grad::{dot, GradVector};
use crate::rng::{stream, Purpose, StreamRng};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::param("dataset is empty"));
        }
        Ok(Dataset { features, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, i: usize) -> (&[f64], u8) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// The stochastic objective workers differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingProblem {
    /// f(x, ξ) = ½‖x − x*‖² with gradient noise N(0, σ²I).
    Quadratic { optimum: Vec<f64>, noise: f64 },
    /// Binary logistic regression (labels 0/1) without intercept, L2-regularized.
    LogisticRegression { train: Dataset, eval: Dataset, l2: f64 },
    /// Multinomial linear classifier: `classes × dim` weights followed by
    /// `classes` biases; weights are L2-regularized.
    LinearMnistSubset { train: Dataset, eval: Dataset, classes: usize, l2: f64 },
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl TrainingProblem {
    /// Parameter dimension d.
    pub fn dim(&self) -> usize {
        match self {
            TrainingProblem::Quadratic { optimum, .. } => optimum.len(),
            TrainingProblem::LogisticRegression { train, .. } => train.dim(),
            TrainingProblem::LinearMnistSubset { train, classes, .. } => classes * train.dim() + classes,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, TrainingProblem::Quadratic { .. })
    }

    pub fn train_len(&self) -> Option<usize> {
        match self {
            TrainingProblem::Quadratic { .. } => None,
            TrainingProblem::LogisticRegression { train, .. } | TrainingProblem::LinearMnistSubset { train, .. } => {
                Some(train.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TrainingProblem::Quadratic { optimum, noise } => {
                if optimum.is_empty() {
                    return Err(Error::config("problem.optimum", "must be non-empty"));
                }
                if !(*noise >= 0.0) {
                    return Err(Error::config("problem.noise", "must be >= 0"));
                }
            }
            TrainingProblem::LogisticRegression { train, eval, l2 } => {
                if train.labels().iter().chain(eval.labels()).any(|&y| y > 1) {
                    return Err(Error::config("problem.labels", "binary labels must be 0 or 1"));
                }
                if eval.dim() != train.dim() {
                    return Err(Error::config("problem.eval", "feature dimension differs from training set"));
                }
                if !(*l2 >= 0.0) {
                    return Err(Error::config("problem.l2", "must be >= 0"));
                }
            }
            TrainingProblem::LinearMnistSubset { train, eval, classes, l2 } => {
                let c = *classes;
                if train.labels().iter().chain(eval.labels()).any(|&y| usize::from(y) >= c) {
                    return Err(Error::config("problem.labels", format!("labels must be below {c}")));
                }
                if eval.dim() != train.dim() {
                    return Err(Error::config("problem.eval", "feature dimension differs from training set"));
                }
                if !(*l2 >= 0.0) {
                    return Err(Error::config("problem.l2", "must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// One worker's stochastic gradient at `x`: the quadratic's noisy
    /// gradient, or a mini-batch gradient over `batch_size` samples drawn
    /// uniformly with replacement.
    pub fn worker_gradient(&self, x: &[f64], batch_size: usize, rng: &mut StreamRng) -> GradVector {
        match self {
            TrainingProblem::Quadratic { optimum, noise } => {
                let normal = Normal::new(0.0, *noise).expect("noise validated");
                GradVector::new(
                    x.iter()
                        .zip(optimum)
                        .map(|(xi, oi)| xi - oi + if *noise > 0.0 { normal.sample(rng) } else { 0.0 })
                        .collect(),
                )
            }
            TrainingProblem::LogisticRegression { train, l2, .. } => {
                let batch: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..train.len())).collect();
                GradVector::new(logistic_gradient(train, x, *l2, batch.iter().copied()))
            }
            TrainingProblem::LinearMnistSubset { train, classes, l2, .. } => {
                let batch: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..train.len())).collect();
                GradVector::new(softmax_gradient(train, *classes, x, *l2, batch.iter().copied()))
            }
        }
    }

    /// ∇F(x) over the whole training set (the noise-free quadratic gradient).
    pub fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TrainingProblem::Quadratic { optimum, .. } => x.iter().zip(optimum).map(|(a, b)| a - b).collect(),
            TrainingProblem::LogisticRegression { train, l2, .. } => logistic_gradient(train, x, *l2, 0..train.len()),
            TrainingProblem::LinearMnistSubset { train, classes, l2, .. } => {
                softmax_gradient(train, *classes, x, *l2, 0..train.len())
            }
        }
    }

    /// F(x) over the whole training set.
    pub fn loss(&self, x: &[f64]) -> f64 {
        match self {
            TrainingProblem::Quadratic { optimum, .. } => {
                0.5 * x.iter().zip(optimum).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            TrainingProblem::LogisticRegression { train, l2, .. } => {
                let data: f64 = (0..train.len())
                    .map(|i| {
                        let (xi, y) = train.sample(i);
                        let z = dot(x, xi);
                        softplus(z) - f64::from(y) * z
                    })
                    .sum::<f64>()
                    / train.len() as f64;
                data + 0.5 * l2 * dot(x, x)
            }
            TrainingProblem::LinearMnistSubset { train, classes, l2, .. } => {
                let p = train.dim();
                let mut logits = vec![0.0; *classes];
                let data: f64 = (0..train.len())
                    .map(|i| {
                        let (xi, y) = train.sample(i);
                        softmax_logits(x, p, xi, &mut logits);
                        log_sum_exp(&logits) - logits[usize::from(y)]
                    })
                    .sum::<f64>()
                    / train.len() as f64;
                let w = &x[..classes * p];
                data + 0.5 * l2 * dot(w, w)
            }
        }
    }

    /// Accuracy on the evaluation set for classifiers, ‖x − x*‖ for the quadratic.
    pub fn eval_metric(&self, x: &[f64]) -> f64 {
        match self {
            TrainingProblem::Quadratic { optimum, .. } => {
                x.iter().zip(optimum).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            TrainingProblem::LogisticRegression { eval, .. } => {
                let hits = (0..eval.len())
                    .filter(|&i| {
                        let (xi, y) = eval.sample(i);
                        u8::from(dot(x, xi) > 0.0) == y
                    })
                    .count();
                hits as f64 / eval.len() as f64
            }
            TrainingProblem::LinearMnistSubset { eval, classes, .. } => {
                let p = eval.dim();
                let mut logits = vec![0.0; *classes];
                let hits = (0..eval.len())
                    .filter(|&i| {
                        let (xi, y) = eval.sample(i);
                        softmax_logits(x, p, xi, &mut logits);
                        argmax(&logits) == usize::from(y)
                    })
                    .count();
                hits as f64 / eval.len() as f64
            }
        }
    }
}

fn logistic_gradient(data: &Dataset, w: &[f64], l2: f64, batch: impl ExactSizeIterator<Item = usize>) -> Vec<f64> {
    let count = batch.len() as f64;
    let mut grad = vec![0.0; data.dim()];
    for i in batch {
        let (xi, y) = data.sample(i);
        let residual = sigmoid(dot(w, xi)) - f64::from(y);
        for (g, &v) in grad.iter_mut().zip(xi) {
            *g += residual * v;
        }
    }
    grad.iter_mut().zip(w).for_each(|(g, &wi)| *g = *g / count + l2 * wi);
    grad
}

fn softmax_logits(x: &[f64], p: usize, features: &[f64], logits: &mut [f64]) {
    let classes = logits.len();
    let (weights, biases) = x.split_at(classes * p);
    for (c, l) in logits.iter_mut().enumerate() {
        *l = dot(&weights[c * p..(c + 1) * p], features) + biases[c];
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, z) in v.iter().enumerate() {
        if *z > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_gradient(
    data: &Dataset,
    classes: usize,
    x: &[f64],
    l2: f64,
    batch: impl ExactSizeIterator<Item = usize>,
) -> Vec<f64> {
    let p = data.dim();
    let count = batch.len() as f64;
    let mut grad = vec![0.0; classes * p + classes];
    let mut logits = vec![0.0; classes];
    for i in batch {
        let (xi, y) = data.sample(i);
        softmax_logits(x, p, xi, &mut logits);
        let lse = log_sum_exp(&logits);
        for c in 0..classes {
            let residual = (logits[c] - lse).exp() - if usize::from(y) == c { 1.0 } else { 0.0 };
            if residual != 0.0 {
                for (g, &v) in grad[c * p..(c + 1) * p].iter_mut().zip(xi) {
                    *g += residual * v;
                }
            }
            grad[classes * p + c] += residual;
        }
    }
    let weights = classes * p;
    for (k, g) in grad.iter_mut().enumerate() {
        *g /= count;
        if k < weights {
            *g += l2 * x[k];
        }
    }
    grad
}

/// Gaussian features and labels drawn from a logistic model whose true
/// weight vector has norm `weight_norm`. The data are a pure function of
/// `data_seed`.
pub fn synthetic_logistic(
    features: usize,
    train: usize,
    test: usize,
    weight_norm: f64,
    l2: f64,
    data_seed: u64,
) -> Result<TrainingProblem> {
    if features == 0 || train == 0 || test == 0 {
        return Err(Error::config("problem", "features, samples and test_samples must be positive"));
    }
    let mut rng = stream(data_seed, 0, Purpose::Data);
    let mut truth: Vec<f64> = (0..features).map(|_| StandardNormal.sample(&mut rng)).collect();
    let scale = weight_norm / dot(&truth, &truth).sqrt();
    truth.iter_mut().for_each(|w| *w *= scale);

    let mut draw = |count: usize| -> Result<Dataset> {
        let mut xs = Vec::with_capacity(count * features);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let start = xs.len();
            xs.extend((0..features).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
            let p = sigmoid(dot(&truth, &xs[start..]));
            ys.push(u8::from(rng.random::<f64>() < p));
        }
        Dataset::new(xs, ys, features)
    };
    let train = draw(train)?;
    let eval = draw(test)?;
    Ok(TrainingProblem::LogisticRegression { train, eval, l2 })
}
