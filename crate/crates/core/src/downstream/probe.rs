//! Shallow models trained on frozen embeddings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DownstreamError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeKind {
    Linear,
    Logistic,
    Knn { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    /// Convergence tolerance on the gradient's max-norm (logistic only).
    pub tol: f64,
    pub max_steps: usize,
    /// Ridge added to the normal equations (linear only).
    pub ridge: f64,
}

impl ProbeSpec {
    pub fn new(kind: ProbeKind) -> Self {
        ProbeSpec { kind, tol: 1e-6, max_steps: 10_000, ridge: 1e-6 }
    }

    pub fn logistic() -> Self {
        Self::new(ProbeKind::Logistic)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProbeTarget {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl ProbeTarget {
    fn len(&self) -> usize {
        match self {
            ProbeTarget::Classes(c) => c.len(),
            ProbeTarget::Values(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Probe {
    Linear {
        coef: Vec<f64>,
        intercept: f64,
    },
    Logistic {
        mean: Vec<f64>,
        scale: Vec<f64>,
        /// `[d, classes]` row-major.
        weights: Vec<f64>,
        bias: Vec<f64>,
        classes: usize,
        steps: usize,
    },
    Knn {
        k: usize,
        points: Vec<Vec<f32>>,
        labels: Vec<usize>,
    },
}

fn check_features(x: &[Vec<f32>]) -> Result<usize, DownstreamError> {
    let d = x.first().map(Vec::len).ok_or_else(|| DownstreamError::Invalid("no training rows".into()))?;
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(DownstreamError::Invalid("feature rows must share a positive width".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DownstreamError::Invalid("non-finite feature".into()));
    }
    Ok(d)
}

fn distinct_classes(y: &[usize]) -> Result<usize, DownstreamError> {
    let k = y.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; k];
    for &c in y {
        seen[c] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(DownstreamError::SingleClass);
    }
    Ok(k)
}

pub fn fit_probe(x: &[Vec<f32>], y: &ProbeTarget, spec: &ProbeSpec) -> Result<Probe, DownstreamError> {
    let d = check_features(x)?;
    if y.len() != x.len() {
        return Err(DownstreamError::Invalid(format!("{} rows but {} targets", x.len(), y.len())));
    }
    match (spec.kind, y) {
        (ProbeKind::Linear, ProbeTarget::Values(v)) => fit_linear(x, v, d, spec.ridge),
        (ProbeKind::Logistic, ProbeTarget::Classes(c)) => fit_logistic(x, c, d, spec),
        (ProbeKind::Knn { k }, ProbeTarget::Classes(c)) => {
            if k == 0 {
                return Err(DownstreamError::Invalid("kNN needs k >= 1".into()));
            }
            distinct_classes(c)?;
            Ok(Probe::Knn { k, points: x.to_vec(), labels: c.clone() })
        }
        (kind, _) => Err(DownstreamError::Invalid(format!("{kind:?} probe does not fit this target type"))),
    }
}

fn fit_linear(x: &[Vec<f32>], y: &[f64], d: usize, ridge: f64) -> Result<Probe, DownstreamError> {
    let n = x.len();
    let mut mean = vec![0f64; d];
    for r in x {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v as f64 / n as f64;
        }
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] as f64 - mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let gram = xc.transpose() * &xc + DMatrix::identity(d, d) * ridge;
    let rhs = xc.transpose() * yc;
    let beta = gram
        .cholesky()
        .ok_or_else(|| DownstreamError::Numerical("normal equations are not positive definite".into()))?
        .solve(&rhs);
    let intercept = ybar - beta.iter().zip(&mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(Probe::Linear { coef: beta.iter().copied().collect(), intercept })
}

fn fit_logistic(x: &[Vec<f32>], y: &[usize], d: usize, spec: &ProbeSpec) -> Result<Probe, DownstreamError> {
    let n = x.len();
    let k = distinct_classes(y)?;
    let mut mean = vec![0f64; d];
    let mut scale = vec![0f64; d];
    for r in x {
        for j in 0..d {
            mean[j] += r[j] as f64 / n as f64;
        }
    }
    for r in x {
        for j in 0..d {
            scale[j] += (r[j] as f64 - mean[j]).powi(2) / n as f64;
        }
    }
    let mut constant = 0;
    for s in scale.iter_mut() {
        *s = s.sqrt();
        if *s < 1e-12 {
            *s = 1.0;
            constant += 1;
        }
    }
    if constant > 0 {
        log::warn!("{constant} of {d} probe features are constant");
    }
    // standardized design with a trailing column of ones for the bias
    let xs = DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { (x[i][j] as f64 - mean[j]) / scale[j] });
    let onehot = DMatrix::from_fn(n, k, |i, c| if y[i] == c { 1.0 } else { 0.0 });
    let reg = 1.0 / n as f64;
    let lmax = power_iteration(&xs) / n as f64;
    let step = 1.0 / (0.5 * lmax + reg);
    let grad_at = |w: &DMatrix<f64>| {
        let mut p = &xs * w;
        for mut row in p.row_iter_mut() {
            let m = row.max();
            row.iter_mut().for_each(|v| *v = (*v - m).exp());
            let s = row.sum();
            row /= s;
        }
        let mut g = xs.transpose() * (p - &onehot) / n as f64;
        for j in 0..d {
            for c in 0..k {
                g[(j, c)] += reg * w[(j, c)];
            }
        }
        g
    };
    // accelerated gradient descent with adaptive restart
    let mut w = DMatrix::<f64>::zeros(d + 1, k);
    let mut prev = w.clone();
    let mut t = 1.0f64;
    let mut steps = 0;
    let mut g_prev_norm = f64::INFINITY;
    while steps < spec.max_steps {
        let g_here = grad_at(&w);
        if g_here.amax() < spec.tol {
            break;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        let v = &w + (&w - &prev) * momentum;
        let g = grad_at(&v);
        prev = w;
        w = v - g * step;
        t = t_next;
        let gn = g_here.amax();
        if gn > g_prev_norm {
            t = 1.0;
        }
        g_prev_norm = gn;
        steps += 1;
    }
    let weights = (0..d).flat_map(|j| (0..k).map(move |c| (j, c))).map(|(j, c)| w[(j, c)]).collect();
    let bias = (0..k).map(|c| w[(d, c)]).collect();
    Ok(Probe::Logistic { mean, scale, weights, bias, classes: k, steps })
}

/// Largest eigenvalue of `x^T x`.
fn power_iteration(x: &DMatrix<f64>) -> f64 {
    let mut v = DVector::from_element(x.ncols(), 1.0 / (x.ncols() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = x.transpose() * (x * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        if (norm - lambda).abs() <= 1e-9 * norm {
            return norm;
        }
        lambda = norm;
        v = next;
    }
    lambda
}

pub fn predict(probe: &Probe, x: &[Vec<f32>]) -> Prediction {
    match probe {
        Probe::Linear { coef, intercept } => Prediction::Values(
            x.iter().map(|r| intercept + r.iter().zip(coef).map(|(&a, b)| a as f64 * b).sum::<f64>()).collect(),
        ),
        Probe::Logistic { mean, scale, weights, bias, classes, .. } => {
            let k = *classes;
            Prediction::Classes(
                x.iter()
                    .map(|r| {
                        let mut logits = bias.clone();
                        for (j, &v) in r.iter().enumerate() {
                            let z = (v as f64 - mean[j]) / scale[j];
                            for c in 0..k {
                                logits[c] += z * weights[j * k + c];
                            }
                        }
                        argmax(&logits)
                    })
                    .collect(),
            )
        }
        Probe::Knn { k, points, labels } => Prediction::Classes(x.iter().map(|r| knn_vote(*k, points, labels, r)).collect()),
    }
}

/// Index of the largest value; the first one on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn knn_vote(k: usize, points: &[Vec<f32>], labels: &[usize], q: &[f32]) -> usize {
    let mut dist: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(q).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>(), i))
        .collect();
    let k = k.min(dist.len());
    dist.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![0usize; n_classes];
    for &(_, i) in &dist[..k] {
        votes[labels[i]] += 1;
    }
    let best = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == best).unwrap()
}

impl Prediction {
    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Prediction::Classes(c) => Some(c),
            Prediction::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Prediction::Values(v) => Some(v),
            Prediction::Classes(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downstream::metrics::accuracy;
    use crate::numcore::SeedTree;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
        let mut rng = SeedTree::new(seed).rng();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let off = if c == 0 { -3.0 } else { 3.0 };
            x.push(vec![off + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 5.0]);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn logistic_separates_blobs() {
        let (x, y) = blobs(200, 1);
        let probe = fit_probe(&x, &ProbeTarget::Classes(y.clone()), &ProbeSpec::logistic()).unwrap();
        let pred = predict(&probe, &x);
        assert_eq!(accuracy(&y, pred.classes().unwrap()), 1.0);
    }

    #[test]
    fn logistic_matches_its_objective_optimum() {
        // at convergence the gradient of mean CE + ||W||^2/(2n) vanishes, so
        // a tiny perturbation cannot lower the objective
        let mut rng = SeedTree::new(2).rng();
        let x: Vec<Vec<f32>> = (0..60).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<usize> = x.iter().map(|r| if r[0] + 0.5 * r[1] + rng.random_range(-0.5..0.5) > 0.0 { 1 } else { 0 }).collect();
        let probe = fit_probe(&x, &ProbeTarget::Classes(y.clone()), &ProbeSpec::logistic()).unwrap();
        let Probe::Logistic { mean, scale, weights, bias, steps, .. } = &probe else { panic!() };
        assert!(*steps < 10_000);
        let objective = |w: &[f64], b: &[f64]| {
            let n = x.len() as f64;
            let mut total = 0.0;
            for (r, &c) in x.iter().zip(&y) {
                let mut l = b.to_vec();
                for j in 0..2 {
                    let z = (r[j] as f64 - mean[j]) / scale[j];
                    l[0] += z * w[j * 2];
                    l[1] += z * w[j * 2 + 1];
                }
                let m = l[0].max(l[1]);
                let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
                total += lse - l[c];
            }
            total / n + w.iter().map(|v| v * v).sum::<f64>() / (2.0 * n)
        };
        let base = objective(weights, bias);
        for i in 0..4 {
            for s in [-1e-3, 1e-3] {
                let mut w = weights.clone();
                w[i] += s;
                assert!(objective(&w, bias) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn knn_self_match_and_ties() {
        let (x, y) = blobs(50, 3);
        let probe = fit_probe(&x, &ProbeTarget::Classes(y.clone()), &ProbeSpec::new(ProbeKind::Knn { k: 1 })).unwrap();
        assert_eq!(accuracy(&y, predict(&probe, &x).classes().unwrap()), 1.0);
        let pts = vec![vec![0.0f32], vec![2.0]];
        let probe = fit_probe(&pts, &ProbeTarget::Classes(vec![1, 0]), &ProbeSpec::new(ProbeKind::Knn { k: 2 })).unwrap();
        assert_eq!(predict(&probe, &[vec![1.0]]).classes().unwrap(), &[0]);
    }

    #[test]
    fn ridge_recovers_slope() {
        let x: Vec<Vec<f32>> = (0..20).map(|i| vec![i as f32 * 0.5]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] as f64).collect();
        let probe = fit_probe(&x, &ProbeTarget::Values(y), &ProbeSpec::new(ProbeKind::Linear)).unwrap();
        let Probe::Linear { coef, intercept } = probe else { panic!() };
        assert!((coef[0] - 2.0).abs() < 1e-4);
        assert!(intercept.abs() < 1e-4);
    }

    #[test]
    fn invalid_inputs() {
        let x = vec![vec![1.0f32], vec![2.0]];
        assert!(matches!(
            fit_probe(&x, &ProbeTarget::Classes(vec![0, 0]), &ProbeSpec::logistic()),
            Err(DownstreamError::SingleClass)
        ));
        assert!(fit_probe(&x, &ProbeTarget::Values(vec![0.0, 1.0]), &ProbeSpec::logistic()).is_err());
        assert!(fit_probe(&x, &ProbeTarget::Classes(vec![0, 1]), &ProbeSpec::new(ProbeKind::Knn { k: 0 })).is_err());
    }

    #[test]
    fn constant_features_are_tolerated() {
        let x = vec![vec![1.0f32, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]];
        let probe = fit_probe(&x, &ProbeTarget::Classes(vec![0, 0, 1, 1]), &ProbeSpec::logistic()).unwrap();
        assert_eq!(predict(&probe, &x).classes().unwrap(), &[0, 0, 1, 1]);
    }
}
