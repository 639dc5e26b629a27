//! Class-level unlearning.
//!
//! The main path removes a class `c` with a single Newton step on the
//! retained objective. Let `g_c` be the unregularized gradient contributed by
//! the class's training documents and `H` the Hessian of the full training
//! objective at `W`. At an optimum of the full objective the retained gradient
//! is `−g_c`, so the step is `W' = W − Δ` with `H Δ = −g_c`, i.e.
//! `W' = W + H⁻¹ g_c`. The system is solved matrix-free by conjugate gradients.
//! At release the row of `c` is zeroed and masked so probabilities renormalize
//! over the remaining labels.
//!
//! Two baselines are provided: retraining from scratch without the class, and
//! uniform random relabeling of the class followed by retraining.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cg_solve, norm2, CgResult, DenseMat, FeatureMatrix};
use crate::par;
use crate::softmax::{self, argmax_masked, HessianOperator, ModelParams, PredictionVector, TrainConfig};

/// Conjugate-gradient settings for the downweight solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
        }
    }
}

/// What one downweight step did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnUpdate {
    /// `Δ = −H⁻¹ g_c`, already subtracted from the weights.
    pub delta: DenseMat,
    pub class_gradient_norm: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub cg_converged: bool,
    pub wall_time_secs: f64,
    pub warning: Option<String>,
}

/// `Σ_{i} (p_i − e_c) x_iᵀ` over the rows of `x_c`, without the ridge term.
pub fn class_gradient(model: &ModelParams, x_c: &FeatureMatrix, c: usize) -> Result<DenseMat> {
    if c >= model.num_classes() {
        return Err(invalid(format!("class {c} out of range")));
    }
    let labels = vec![c; x_c.n_rows()];
    let mut g = softmax::gradient(model, x_c, &labels)?;
    for (gv, &w) in g.as_mut_slice().iter_mut().zip(model.weights().as_slice()) {
        *gv -= model.lambda() * w;
    }
    Ok(g)
}

/// Solves `H Δ = g` by CG for any SPD operator `apply_h`.
///
/// A zero right-hand side gives `Δ = 0` without touching the operator.
pub fn newton_downweight<F>(g: &[f64], apply_h: F, cg: &CgConfig) -> Result<CgResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let res = cg_solve(apply_h, g, cg.tol, cg.max_iter)?;
    if res.solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("downweight step"));
    }
    Ok(res)
}

/// Removes class `c` from `model` with one Hessian downweight step.
///
/// `x_all`/`y_all` are the full training set the model was fitted on; the
/// Hessian is taken over all of it. Hitting the CG iteration cap is recorded
/// as a warning and the best iterate is applied.
pub fn hessian_downweight(
    model: &ModelParams,
    x_all: &FeatureMatrix,
    y_all: &[usize],
    c: usize,
    cg: &CgConfig,
) -> Result<(ModelParams, UnlearnUpdate)> {
    let start = Instant::now();
    if y_all.len() != x_all.n_rows() {
        return Err(Error::Dimension {
            expected: x_all.n_rows(),
            got: y_all.len(),
        });
    }
    let deleted: Vec<usize> = (0..y_all.len()).filter(|&i| y_all[i] == c).collect();
    let x_c = x_all.select_rows(&deleted);
    let g_c = class_gradient(model, &x_c, c)?;
    let g_norm = norm2(g_c.as_slice());
    let (k, d) = (model.num_classes(), model.dim());

    if g_c.as_slice().iter().all(|&v| v == 0.0) {
        return Ok((
            model.clone(),
            UnlearnUpdate {
                delta: DenseMat::zeros(k, d),
                class_gradient_norm: 0.0,
                cg_iterations: 0,
                cg_residual: 0.0,
                cg_converged: true,
                wall_time_secs: start.elapsed().as_secs_f64(),
                warning: None,
            },
        ));
    }

    let op = HessianOperator::new(model, x_all)?;
    let rhs: Vec<f64> = g_c.as_slice().iter().map(|v| -v).collect();
    let res = newton_downweight(&rhs, |v| op.apply_flat(v), cg)?;
    let warning = (!res.converged).then(|| {
        format!(
            "conjugate gradients hit {} iterations with residual {:.3e}; applied best iterate",
            res.iterations, res.residual_norm
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let delta = DenseMat::from_vec(k, d, res.solution)?;
    let mut w = model.weights().clone();
    for (wv, dv) in w.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *wv -= dv;
    }
    let updated = model.with_weights(w)?;
    Ok((
        updated,
        UnlearnUpdate {
            delta,
            class_gradient_norm: g_norm,
            cg_iterations: res.iterations,
            cg_residual: res.residual_norm,
            cg_converged: res.converged,
            wall_time_secs: start.elapsed().as_secs_f64(),
            warning,
        },
    ))
}

/// A deployable model: weights, the set of classes it may predict, and
/// optional Gaussian noise added to the logits at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleasedModel {
    pub params: ModelParams,
    pub removed_class: Option<usize>,
    pub active: Vec<bool>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl ReleasedModel {
    /// Releases `params` as-is, every class active.
    pub fn unmasked(params: ModelParams) -> Self {
        let k = params.num_classes();
        Self {
            params,
            removed_class: None,
            active: vec![true; k],
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.noise_seed = seed;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes()
    }

    /// Active class ids, ascending.
    pub fn active_classes(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&k| self.active[k]).collect()
    }

    /// Logits, with release noise added to the active classes when σ > 0.
    ///
    /// Noise for row `i` comes from a stream keyed by `(noise_seed, i)`, so a
    /// given input position always sees the same draw.
    pub fn logits(&self, x: &FeatureMatrix) -> Result<DenseMat> {
        let mut s = softmax::scores(&self.params, x)?;
        if self.noise_sigma > 0.0 {
            let k = s.cols();
            let sigma = self.noise_sigma;
            let seed = self.noise_seed;
            let active = &self.active;
            par::for_each_block_mut(s.as_mut_slice(), k, |i, row| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                for (v, &a) in row.iter_mut().zip(active) {
                    if a {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += sigma * z;
                    }
                }
            });
        }
        Ok(s)
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<PredictionVector>> {
        softmax::probs(&self.logits(x)?, Some(&self.active))
    }

    /// Predicted label per row, restricted to active classes.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        let s = self.logits(x)?;
        Ok((0..s.rows())
            .map(|i| argmax_masked(s.row(i), Some(&self.active)))
            .collect())
    }

    /// Zeroes and masks class `c`.
    pub fn zero_class(&self, c: usize) -> Result<Self> {
        if c >= self.num_classes() {
            return Err(invalid(format!("class {c} out of range")));
        }
        let mut out = self.clone();
        out.params.weights_mut().row_mut(c).fill(0.0);
        out.active[c] = false;
        if out.active.iter().all(|a| !a) {
            return Err(invalid("masking would leave no active class"));
        }
        out.removed_class = Some(c);
        Ok(out)
    }
}

/// Zeroes row `c` of `W` and masks the class out of predictions.
pub fn zero_class(model: &ModelParams, c: usize) -> Result<ReleasedModel> {
    ReleasedModel::unmasked(model.clone()).zero_class(c)
}

/// Highest-scoring label other than `c` (lowest id on ties).
pub fn next_top1_from_scores(scores: &[f64], c: usize) -> Result<usize> {
    if scores.len() < 2 {
        return Err(invalid("no label remains once the class is removed"));
    }
    let mask: Vec<bool> = (0..scores.len()).map(|k| k != c).collect();
    Ok(argmax_masked(scores, Some(&mask)))
}

/// Next top-1 label for every row of `x` under the pre-unlearning model.
pub fn next_top1(pre_model: &ModelParams, x: &FeatureMatrix, c: usize) -> Result<Vec<usize>> {
    if c >= pre_model.num_classes() {
        return Err(invalid(format!("class {c} out of range")));
    }
    let s = softmax::scores(pre_model, x)?;
    (0..s.rows()).map(|i| next_top1_from_scores(s.row(i), c)).collect()
}

/// Replaces every label equal to `c` with a uniform draw from the other
/// `k − 1` labels.
pub fn random_relabel(y: &[usize], c: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid("random relabeling needs at least two labels"));
    }
    if c >= k {
        return Err(invalid(format!("class {c} out of range for {k} labels")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(y.iter()
        .map(|&l| {
            if l == c {
                let r = rng.random_range(0..k - 1);
                if r >= c {
                    r + 1
                } else {
                    r
                }
            } else {
                l
            }
        })
        .collect())
}

/// Order-preserving map between the `k` original labels and the `k − 1`
/// labels left after removing one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub removed: usize,
    /// `to_original[new] = old`.
    pub to_original: Vec<usize>,
}

impl LabelMap {
    pub fn without(k: usize, removed: usize) -> Self {
        Self {
            removed,
            to_original: (0..k).filter(|&l| l != removed).collect(),
        }
    }

    pub fn num_original(&self) -> usize {
        self.to_original.len() + 1
    }

    pub fn compact(&self, old: usize) -> Option<usize> {
        match old.cmp(&self.removed) {
            std::cmp::Ordering::Less => Some(old),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(old - 1),
        }
    }

    pub fn original(&self, new: usize) -> usize {
        self.to_original[new]
    }
}

/// A `(K−1)`-class model retrained without one class, with its label map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainedModel {
    pub params: ModelParams,
    pub label_map: LabelMap,
}

impl RetrainedModel {
    /// Predictions in the original label space.
    pub fn predict_original(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        Ok(softmax::predict(&self.params, x, None)?
            .into_iter()
            .map(|l| self.label_map.original(l))
            .collect())
    }

    /// The same predictor as a `K`-row released model: the removed class gets
    /// a zero row and is masked. Probabilities are unchanged.
    pub fn to_released(&self) -> Result<ReleasedModel> {
        let k = self.label_map.num_original();
        let d = self.params.dim();
        let mut w = DenseMat::zeros(k, d);
        for (new, &old) in self.label_map.to_original.iter().enumerate() {
            w.row_mut(old).copy_from_slice(self.params.weights().row(new));
        }
        let params = ModelParams::new(w, self.params.lambda())?;
        ReleasedModel::unmasked(params).zero_class(self.label_map.removed)
    }
}

/// Retrains from scratch on the retained documents (golden standard).
///
/// `y_retained` holds original label ids, none equal to `c`.
pub fn golden_retrain(
    x_retained: &FeatureMatrix,
    y_retained: &[usize],
    c: usize,
    k: usize,
    config: &TrainConfig,
) -> Result<RetrainedModel> {
    let map = LabelMap::without(k, c);
    let compact = y_retained
        .iter()
        .map(|&l| {
            map.compact(l)
                .ok_or_else(|| invalid(format!("retained set contains removed class {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if k < 3 {
        return Err(invalid("retraining without a class needs at least two remaining classes"));
    }
    let params = softmax::train(x_retained, &compact, k - 1, config)?;
    Ok(RetrainedModel {
        params,
        label_map: map,
    })
}

/// Random relabeling baseline: reassign class `c` uniformly at random among
/// the other labels, then retrain from scratch on every document.
pub fn random_relabel_retrain(
    x_train: &FeatureMatrix,
    y_train: &[usize],
    c: usize,
    k: usize,
    seed: u64,
    config: &TrainConfig,
) -> Result<RetrainedModel> {
    let relabeled = random_relabel(y_train, c, k, seed)?;
    golden_retrain(x_train, &relabeled, c, k, config)
}

/// Renormalized probabilities after masking, used by callers that hold a
/// plain probability vector rather than scores.
pub fn mask_probs(p: &[f64], c: usize) -> Vec<f64> {
    let rest: f64 = p.iter().enumerate().filter(|&(k, _)| k != c).map(|(_, v)| v).sum();
    p.iter()
        .enumerate()
        .map(|(k, &v)| if k == c { 0.0 } else { v / rest })
        .collect()
}
