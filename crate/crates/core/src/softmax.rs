//! Multinomial logistic regression without intercept.
//!
//! The objective is the *sum* of per-sample cross-entropies plus
//! `(λ/2)‖W‖²_F`, with `λ = 1 / C`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{DenseMat, FeatureMatrix};
use crate::optim::{self, Method};
use crate::par;

/// Weights of a linear-softmax head: `K × d`, plus the ridge strength λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    weights: DenseMat,
    lambda: f64,
}

impl ModelParams {
    pub fn new(weights: DenseMat, lambda: f64) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(invalid(format!("need at least 2 classes, got {}", weights.rows())));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive and finite, got {lambda}")));
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(Self { weights, lambda })
    }

    pub fn zeros(k: usize, d: usize, lambda: f64) -> Result<Self> {
        Self::new(DenseMat::zeros(k, d), lambda)
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self) -> &DenseMat {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut DenseMat {
        &mut self.weights
    }

    /// Same λ, new weights of the same shape.
    pub fn with_weights(&self, weights: DenseMat) -> Result<Self> {
        if weights.rows() != self.num_classes() || weights.cols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.num_classes() * self.dim(),
                got: weights.rows() * weights.cols(),
            });
        }
        Self::new(weights, self.lambda)
    }
}

/// Trainer settings. `c` is the inverse regularization strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub c: f64,
    pub grad_tol: f64,
    pub max_epochs: usize,
    pub memory: usize,
    pub seed: u64,
    pub optimizer: Method,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            grad_tol: 1e-5,
            max_epochs: 5000,
            memory: 10,
            seed: 0,
            optimizer: Method::Lbfgs,
        }
    }
}

impl TrainConfig {
    pub fn lambda(&self) -> f64 {
        1.0 / self.c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(invalid(format!("C must be positive, got {}", self.c)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        Ok(())
    }
}

/// Class probabilities for one input, with the set of classes still active.
/// Inactive classes carry exactly zero probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub probs: Vec<f64>,
    pub active: Vec<bool>,
}

impl PredictionVector {
    pub fn unmasked(probs: Vec<f64>) -> Self {
        let active = vec![true; probs.len()];
        Self { probs, active }
    }

    /// Probabilities of the active classes, in ascending class order.
    pub fn active_probs(&self) -> Vec<f64> {
        self.probs
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(&p, _)| p)
            .collect()
    }

    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Most probable active class; ties go to the lowest id.
    pub fn argmax(&self) -> usize {
        argmax_masked(&self.probs, Some(&self.active))
    }
}

/// Index of the largest active entry, lowest index on ties.
pub fn argmax_masked(values: &[f64], mask: Option<&[bool]>) -> usize {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(k);
        }
    }
    best.expect("at least one active class")
}

/// Scores `W x_i` for every row, as an `n × K` matrix.
pub fn scores(model: &ModelParams, x: &FeatureMatrix) -> Result<DenseMat> {
    x.times_transpose(model.weights())
}

/// Numerically stable softmax of one score row over the active classes.
pub fn softmax_row(scores: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let active = |k: usize| mask.is_none_or(|m| m[k]);
    let max = scores
        .iter()
        .enumerate()
        .filter(|&(k, _)| active(k))
        .fold(f64::NEG_INFINITY, |m, (_, &s)| m.max(s));
    let mut out: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(k, &s)| if active(k) { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Row-wise softmax of an `n × K` score matrix.
pub fn probs(scores: &DenseMat, mask: Option<&[bool]>) -> Result<Vec<PredictionVector>> {
    if let Some(m) = mask {
        if m.len() != scores.cols() {
            return Err(Error::Dimension {
                expected: scores.cols(),
                got: m.len(),
            });
        }
        if !m.iter().any(|&a| a) {
            return Err(invalid("class mask leaves no active class"));
        }
    }
    let active = mask.map_or_else(|| vec![true; scores.cols()], <[bool]>::to_vec);
    Ok(par::map_indices(scores.rows(), |i| PredictionVector {
        probs: softmax_row(scores.row(i), mask),
        active: active.clone(),
    }))
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let max = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + s.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(model: &ModelParams, x: &FeatureMatrix, y: &[usize]) -> Result<()> {
    if x.n_cols() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x.n_cols(),
        });
    }
    if y.len() != x.n_rows() {
        return Err(Error::Dimension {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= model.num_classes()) {
        return Err(invalid(format!(
            "label {bad} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Objective value and gradient in one pass over the data.
pub fn loss_and_gradient(model: &ModelParams, x: &FeatureMatrix, y: &[usize]) -> Result<(f64, DenseMat)> {
    check_labels(model, x, y)?;
    let s = scores(model, x)?;
    let k = model.num_classes();
    let mut residual = DenseMat::zeros(x.n_rows(), k);
    let mut nll = vec![0.0; x.n_rows()];
    par::for_each_block_mut(residual.as_mut_slice(), par::ROW_CHUNK * k, |b, block| {
        for (r, dst) in block.chunks_mut(k).enumerate() {
            let i = b * par::ROW_CHUNK + r;
            dst.copy_from_slice(&softmax_row(s.row(i), None));
            dst[y[i]] -= 1.0;
        }
    });
    par::for_each_block_mut(&mut nll, par::ROW_CHUNK, |b, block| {
        for (r, v) in block.iter_mut().enumerate() {
            let i = b * par::ROW_CHUNK + r;
            let row = s.row(i);
            *v = log_sum_exp(row) - row[y[i]];
        }
    });
    let data_loss: f64 = nll.iter().sum();
    let w = model.weights();
    let loss = data_loss + 0.5 * model.lambda() * w.frobenius_sq();
    let mut grad = x.transpose_times(&residual)?;
    for (g, &wv) in grad.as_mut_slice().iter_mut().zip(w.as_slice()) {
        *g += model.lambda() * wv;
    }
    Ok((loss, grad))
}

/// Sum of cross-entropies plus `(λ/2)‖W‖²`.
pub fn loss(model: &ModelParams, x: &FeatureMatrix, y: &[usize]) -> Result<f64> {
    Ok(loss_and_gradient(model, x, y)?.0)
}

/// `(P − Y)ᵀ X + λ W`.
pub fn gradient(model: &ModelParams, x: &FeatureMatrix, y: &[usize]) -> Result<DenseMat> {
    Ok(loss_and_gradient(model, x, y)?.1)
}

/// The Hessian of the objective at a fixed `W`, as a linear operator on
/// `K × d` directions. Class probabilities are computed once up front.
pub struct HessianOperator<'a> {
    x: &'a FeatureMatrix,
    probs: DenseMat,
    lambda: f64,
    k: usize,
}

impl<'a> HessianOperator<'a> {
    pub fn new(model: &ModelParams, x: &'a FeatureMatrix) -> Result<Self> {
        let s = scores(model, x)?;
        let k = model.num_classes();
        let mut p = DenseMat::zeros(x.n_rows(), k);
        par::for_each_block_mut(p.as_mut_slice(), par::ROW_CHUNK * k, |b, block| {
            for (r, dst) in block.chunks_mut(k).enumerate() {
                dst.copy_from_slice(&softmax_row(s.row(b * par::ROW_CHUNK + r), None));
            }
        });
        Ok(Self {
            x,
            probs: p,
            lambda: model.lambda(),
            k,
        })
    }

    /// `H[V] = (P⊙U − P⊙(s 1ᵀ))ᵀ X + λV` with `U = X Vᵀ`, `s_i = Σ_k P_ik U_ik`.
    pub fn apply(&self, v: &DenseMat) -> Result<DenseMat> {
        let k = self.k;
        let mut a = self.x.times_transpose(v)?;
        par::for_each_block_mut(a.as_mut_slice(), par::ROW_CHUNK * k, |b, block| {
            for (r, row) in block.chunks_mut(k).enumerate() {
                let p = self.probs.row(b * par::ROW_CHUNK + r);
                let s: f64 = p.iter().zip(row.iter()).map(|(pk, uk)| pk * uk).sum();
                for (u, &pk) in row.iter_mut().zip(p) {
                    *u = pk * (*u - s);
                }
            }
        });
        let mut out = self.x.transpose_times(&a)?;
        for (o, &vv) in out.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *o += self.lambda * vv;
        }
        Ok(out)
    }

    /// `apply` on a flattened row-major `K·d` vector.
    pub fn apply_flat(&self, v: &[f64]) -> Result<Vec<f64>> {
        let m = DenseMat::from_vec(self.k, self.x.n_cols(), v.to_vec())?;
        Ok(self.apply(&m)?.into_vec())
    }
}

/// Hessian-vector product of the full objective at `model`.
pub fn hvp(model: &ModelParams, x: &FeatureMatrix, v: &DenseMat) -> Result<DenseMat> {
    if v.rows() != model.num_classes() || v.cols() != model.dim() {
        return Err(Error::Dimension {
            expected: model.num_classes() * model.dim(),
            got: v.rows() * v.cols(),
        });
    }
    HessianOperator::new(model, x)?.apply(v)
}

/// Summary of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub converged: bool,
}

/// Fits a `k`-class model from `W = 0`.
pub fn train(x: &FeatureMatrix, y: &[usize], k: usize, config: &TrainConfig) -> Result<ModelParams> {
    Ok(train_with_report(x, y, k, config)?.0)
}

pub fn train_with_report(
    x: &FeatureMatrix,
    y: &[usize],
    k: usize,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let mut present = vec![false; k];
    for &l in y {
        if l >= k {
            return Err(invalid(format!("label {l} out of range for {k} classes")));
        }
        present[l] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(invalid(format!("class {missing} has no training examples")));
    }
    let d = x.n_cols();
    let start = ModelParams::zeros(k, d, config.lambda())?;
    check_labels(&start, x, y)?;
    let lambda = config.lambda();
    let objective = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
        let m = ModelParams {
            weights: DenseMat::from_vec(k, d, w.to_vec())?,
            lambda,
        };
        let (l, g) = loss_and_gradient(&m, x, y)?;
        Ok((l, g.into_vec()))
    };
    let opts = optim::Options {
        method: config.optimizer,
        memory: config.memory,
        grad_tol: config.grad_tol,
        max_iter: config.max_epochs,
    };
    let (w, rep) = optim::minimize(objective, vec![0.0; k * d], &opts)?;
    if !rep.converged {
        log::warn!(
            "training stopped after {} iterations with gradient norm {:.3e} (tolerance {:.1e})",
            rep.iterations,
            rep.grad_inf_norm,
            config.grad_tol
        );
    }
    let model = ModelParams::new(DenseMat::from_vec(k, d, w)?, lambda)?;
    Ok((
        model,
        TrainReport {
            iterations: rep.iterations,
            evaluations: rep.evaluations,
            loss: rep.value,
            grad_inf_norm: rep.grad_inf_norm,
            converged: rep.converged,
        },
    ))
}

/// Predicted class per row (lowest id on ties), optionally restricted by a mask.
pub fn predict(model: &ModelParams, x: &FeatureMatrix, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    let s = scores(model, x)?;
    Ok((0..s.rows()).map(|i| argmax_masked(s.row(i), mask)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, norm_inf};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn x_from(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_dense(&DenseMat::from_rows(rows))
    }

    fn params(rows: &[Vec<f64>], lambda: f64) -> ModelParams {
        ModelParams::new(DenseMat::from_rows(rows), lambda).unwrap()
    }

    #[test]
    fn scores_examples() {
        let m = ModelParams::zeros(3, 2, 1.0).unwrap();
        let s = scores(&m, &x_from(&[vec![1.0, 2.0]])).unwrap();
        assert_eq!(s.row(0), &[0.0; 3]);
        let m = params(&[vec![2.0], vec![-1.0]], 1.0);
        assert_eq!(scores(&m, &x_from(&[vec![3.0]])).unwrap().row(0), &[6.0, -3.0]);
        assert_eq!(scores(&m, &x_from(&[vec![0.0]])).unwrap().row(0), &[0.0, 0.0]);
        assert!(scores(&m, &x_from(&[vec![0.0, 1.0]])).is_err());
    }

    #[test]
    fn probs_examples() {
        let p = softmax_row(&[0.0, 0.0], None);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax_row(&[2f64.ln(), 0.0], None);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let s = DenseMat::from_rows(&[vec![5.0, 1.0, 1.0]]);
        let p = probs(&s, Some(&[false, true, true])).unwrap();
        assert_eq!(p[0].probs, vec![0.0, 0.5, 0.5]);
        assert!(probs(&s, Some(&[false, false, false])).is_err());
    }

    #[test]
    fn softmax_is_stable_for_huge_scores() {
        let p = softmax_row(&[1000.0, 0.0, -1000.0], None);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let m = ModelParams::zeros(2, 1, 1.0).unwrap();
        assert!((loss(&m, &x_from(&[vec![1.0]]), &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let m = ModelParams::zeros(4, 3, 0.5).unwrap();
        let x = x_from(&vec![vec![0.3, 0.0, 1.0]; 7]);
        let l = loss(&m, &x, &[0, 1, 2, 3, 0, 1, 2]).unwrap();
        assert!((l - 7.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let m = ModelParams::zeros(2, 1, 1.0).unwrap();
        let g = gradient(&m, &x_from(&[vec![1.0]]), &[0]).unwrap();
        assert_eq!(g.as_slice(), &[-0.5, 0.5]);
        let m = params(&[vec![1.0, -2.0], vec![0.5, 3.0]], 0.3);
        let empty = FeatureMatrix::from_rows(2, vec![]).unwrap();
        let g = gradient(&m, &empty, &[]).unwrap();
        let expect: Vec<f64> = m.weights().as_slice().iter().map(|w| 0.3 * w).collect();
        assert_eq!(g.as_slice(), expect.as_slice());
    }

    #[test]
    fn hvp_examples() {
        let m = params(&[vec![1.0, -2.0], vec![0.5, 3.0]], 0.3);
        let v = DenseMat::from_rows(&[vec![2.0, 1.0], vec![-1.0, 0.0]]);
        let empty = FeatureMatrix::from_rows(2, vec![]).unwrap();
        let h = hvp(&m, &empty, &v).unwrap();
        let expect: Vec<f64> = v.as_slice().iter().map(|a| 0.3 * a).collect();
        assert_eq!(h.as_slice(), expect.as_slice());

        // λ = 0 is not a legal model; build the λ-free product by subtracting λV.
        let m = ModelParams::zeros(2, 1, 1e-300).unwrap();
        let v = DenseMat::from_rows(&[vec![1.0], vec![0.0]]);
        let h = hvp(&m, &x_from(&[vec![1.0]]), &v).unwrap();
        assert!((h.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((h.get(1, 0) + 0.25).abs() < 1e-15);
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> (ModelParams, FeatureMatrix, Vec<usize>) {
        let x = DenseMat::from_vec(
            n,
            d,
            (0..n * d).map(|_| if rng.random::<f64>() < 0.6 { rng.random::<f64>() } else { 0.0 }).collect(),
        )
        .unwrap();
        let w = DenseMat::from_vec(k, d, (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..n).map(|_| rng.random_range(0..k)).collect();
        (ModelParams::new(w, rng.random_range(0.05..1.0)).unwrap(), FeatureMatrix::from_dense(&x), y)
    }

    #[test]
    fn hvp_linear_symmetric_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let (m, x, _) = random_instance(&mut rng, 25, 6, 4);
            let rand_v = |rng: &mut ChaCha8Rng| {
                DenseMat::from_vec(4, 6, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            };
            let (v1, v2) = (rand_v(&mut rng), rand_v(&mut rng));
            let a = rng.random_range(-2.0..2.0);
            let comb: Vec<f64> = v1.as_slice().iter().zip(v2.as_slice()).map(|(p, q)| a * p + q).collect();
            let h1 = hvp(&m, &x, &v1).unwrap();
            let h2 = hvp(&m, &x, &v2).unwrap();
            let hc = hvp(&m, &x, &DenseMat::from_vec(4, 6, comb).unwrap()).unwrap();
            for i in 0..24 {
                let expect = a * h1.as_slice()[i] + h2.as_slice()[i];
                assert!((hc.as_slice()[i] - expect).abs() <= 1e-10);
            }
            let s12 = dot(v1.as_slice(), h2.as_slice());
            let s21 = dot(v2.as_slice(), h1.as_slice());
            assert!((s12 - s21).abs() <= 1e-10);
            let quad = dot(v1.as_slice(), h1.as_slice());
            assert!(quad >= m.lambda() * v1.frobenius_sq() - 1e-10);
        }
    }

    #[test]
    fn train_separable_toy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let c = i % 2;
            let a = 1.0 + rng.random::<f64>();
            let b = rng.random::<f64>() * 0.5;
            rows.push(if c == 0 { vec![a, b] } else { vec![b, a] });
            y.push(c);
        }
        let x = x_from(&rows);
        let cfg = TrainConfig::default();
        let (m, rep) = train_with_report(&x, &y, 2, &cfg).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!(norm_inf(gradient(&m, &x, &y).unwrap().as_slice()) <= 1e-5);
        assert_eq!(predict(&m, &x, None).unwrap(), y);
        let again = train(&x, &y, 2, &TrainConfig { seed: 99, ..cfg }).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn train_duplicated_points_give_uniform_probs() {
        let x = x_from(&[vec![1.0, 0.5], vec![1.0, 0.5]]);
        let m = train(&x, &[0, 1], 2, &TrainConfig::default()).unwrap();
        let p = probs(&scores(&m, &x).unwrap(), None).unwrap();
        for pv in p {
            assert!((pv.probs[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn train_rejects_missing_class() {
        let x = x_from(&[vec![1.0], vec![2.0]]);
        assert!(train(&x, &[0, 0], 2, &TrainConfig::default()).is_err());
    }

    #[test]
    fn gradient_descent_fallback_converges() {
        let x = x_from(&[vec![1.0, 0.1], vec![0.1, 1.0], vec![0.9, 0.2], vec![0.2, 0.8]]);
        let y = [0, 1, 0, 1];
        let cfg = TrainConfig { optimizer: Method::GradientDescent, max_epochs: 100_000, c: 1.0, ..Default::default() };
        let (m, rep) = train_with_report(&x, &y, 2, &cfg).unwrap();
        assert!(rep.converged, "{rep:?}");
        let lb = train(&x, &y, 2, &TrainConfig { c: 1.0, ..Default::default() }).unwrap();
        for (a, b) in m.weights().as_slice().iter().zip(lb.weights().as_slice()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
