//! Membership inference with pooled shadow models.
//!
//! Each shadow replays the full pipeline (vocabulary, training and, when asked,
//! the same unlearning method) on a random half of the training corpus. The
//! attacker is a class-balanced logistic regression over prediction statistics
//! and is scored on the target model by ROC-AUC, separately for retained-class
//! documents and for documents of the removed class.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledCorpus;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, FeatureMatrix};
use crate::metrics;
use crate::optim::{self, Method};
use crate::par;
use crate::pipeline::{self, UnlearnMethod};
use crate::softmax::{PredictionVector, TrainConfig};
use crate::tfidf::PipelineConfig;
use crate::unlearn::{CgConfig, ReleasedModel};

/// `[p ‖ H(p) ‖ −ln p_top ‖ p_(1) − p_(2)]` over the active classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFeatures(pub Vec<f64>);

impl AttackFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Attack features of one prediction. Natural logs, `0 · ln 0 = 0`.
pub fn attack_features(p: &PredictionVector) -> Result<AttackFeatures> {
    let probs = p.active_probs();
    if probs.len() < 2 {
        return Err(invalid("attack features need at least two active classes"));
    }
    let entropy: f64 = -probs
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>();
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in &probs {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    let nll = if first > 0.0 { -first.ln() } else { f64::INFINITY };
    let mut f = probs;
    f.extend([entropy.max(0.0), nll.max(0.0), first - second]);
    Ok(AttackFeatures(f))
}

/// ROC-AUC as the normalized Mann–Whitney statistic:
/// `P(s_member > s_nonmember) + ½ P(equal)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid("ROC-AUC needs both member and non-member examples"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("attack scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of average (1-based) ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&o| labels[o]).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Class-balanced logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attacker {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub coef: Vec<f64>,
    pub intercept: f64,
}

/// Ridge strength on the (mean) attacker loss; the intercept is not penalized.
const ATTACKER_L2: f64 = 1e-3;

impl Attacker {
    /// Membership score in `[0, 1]`.
    pub fn score(&self, f: &AttackFeatures) -> f64 {
        sigmoid(self.decision(f.as_slice()))
    }

    pub fn decision(&self, f: &[f64]) -> f64 {
        let z: Vec<f64> = f
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect();
        dot(&z, &self.coef) + self.intercept
    }

    pub fn dim(&self) -> usize {
        self.coef.len()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Trains the membership attacker.
///
/// Each class gets total weight ½ and the loss is averaged, so duplicating the
/// whole training set leaves the objective unchanged. The fit starts from zero
/// and is deterministic.
pub fn train_attacker(features: &[AttackFeatures], member: &[bool]) -> Result<Attacker> {
    if features.len() != member.len() {
        return Err(Error::Dimension {
            expected: member.len(),
            got: features.len(),
        });
    }
    let n_pos = member.iter().filter(|&&m| m).count();
    let n_neg = member.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid("attacker training data must contain members and non-members"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(invalid("attack feature vectors differ in length"));
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f.as_slice()) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in scale.iter_mut().zip(f.as_slice()).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    scale.iter_mut().for_each(|s| {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    });
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            f.as_slice()
                .iter()
                .zip(mean.iter().zip(&scale))
                .map(|(&v, (&m, &s))| (v - m) / s)
                .collect()
        })
        .collect();
    let weight = |m: bool| if m { 0.5 / n_pos as f64 } else { 0.5 / n_neg as f64 };

    // parameters: coef[0..dim], intercept
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (coef, b) = theta.split_at(dim);
        let mut loss = 0.5 * ATTACKER_L2 * dot(coef, coef);
        let mut grad = vec![0.0; dim + 1];
        for (zi, &m) in z.iter().zip(member) {
            let t = dot(zi, coef) + b[0];
            let w = weight(m);
            // y ∈ {0,1}: loss = softplus(t) − y t
            loss += w * (softplus(t) - if m { t } else { 0.0 });
            let r = w * (sigmoid(t) - if m { 1.0 } else { 0.0 });
            for (g, &zv) in grad.iter_mut().zip(zi) {
                *g += r * zv;
            }
            grad[dim] += r;
        }
        for (g, &c) in grad.iter_mut().zip(coef) {
            *g += ATTACKER_L2 * c;
        }
        Ok((loss, grad))
    };
    let opts = optim::Options {
        method: Method::Lbfgs,
        memory: 10,
        grad_tol: 1e-9,
        max_iter: 2000,
    };
    let (theta, _) = optim::minimize(objective, vec![0.0; dim + 1], &opts)?;
    Ok(Attacker {
        mean,
        scale,
        coef: theta[..dim].to_vec(),
        intercept: theta[dim],
    })
}

/// What the shadows (and the target) release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// The trained model, all classes active.
    Pre,
    /// The model after deleting `class` with `method`.
    Unlearned { method: UnlearnMethod, class: usize },
}

/// One shadow model's emitted attack data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub members: Vec<usize>,
    pub holdout: Vec<usize>,
    /// Member rows first, then holdout rows.
    pub features: Vec<AttackFeatures>,
    pub member_bits: Vec<bool>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPool {
    pub condition: Condition,
    pub shadows: Vec<Shadow>,
}

impl ShadowPool {
    /// All shadows' features and member bits, concatenated in shadow order.
    pub fn pooled(&self) -> (Vec<AttackFeatures>, Vec<bool>) {
        let mut f = Vec::new();
        let mut m = Vec::new();
        for s in &self.shadows {
            f.extend(s.features.iter().cloned());
            m.extend_from_slice(&s.member_bits);
        }
        (f, m)
    }
}

/// Everything a shadow needs to replay the target's pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSettings {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub cg: CgConfig,
    pub count: usize,
}

/// Seed offset between a shadow's split seed and its relabeling seed.
const SHADOW_RELABEL_OFFSET: u64 = 0x5EED_0000;

/// Class-stratified random halving of `indices`.
fn half_split(labels: &[usize], indices: &[usize], k: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in indices {
        by_label[labels[i]].push(i);
    }
    let mut members = Vec::new();
    let mut holdout = Vec::new();
    for mut group in by_label {
        group.shuffle(&mut rng);
        let half = group.len() / 2;
        members.extend_from_slice(&group[..half]);
        holdout.extend_from_slice(&group[half..]);
    }
    members.sort_unstable();
    holdout.sort_unstable();
    (members, holdout)
}

/// Releases the model for `condition` from a fitted pipeline.
pub fn release_for(
    fitted: &pipeline::FittedPipeline,
    condition: Condition,
    settings_train: &TrainConfig,
    cg: &CgConfig,
    relabel_seed: u64,
) -> Result<ReleasedModel> {
    match condition {
        Condition::Pre => Ok(ReleasedModel::unmasked(fitted.model.clone())),
        Condition::Unlearned { method, class } => {
            Ok(pipeline::unlearn(fitted, method, class, cg, settings_train, relabel_seed)?.released)
        }
    }
}

/// Attack features of every row under a released model.
pub fn features_for(model: &ReleasedModel, x: &FeatureMatrix) -> Result<Vec<AttackFeatures>> {
    model.predict_proba(x)?.iter().map(attack_features).collect()
}

/// Trains `settings.count` shadows on random halves of `train_indices`.
///
/// Shadow `s` splits with seed `seed + s`. Shadows are independent and run in
/// parallel; any failure aborts the whole pool.
pub fn build_shadow_pool(
    corpus: &LabeledCorpus,
    train_indices: &[usize],
    settings: &ShadowSettings,
    condition: Condition,
    seed: u64,
) -> Result<ShadowPool> {
    if settings.count < 2 {
        return Err(invalid(format!("need at least 2 shadows, got {}", settings.count)));
    }
    let k = corpus.num_classes();
    let results = par::map_indices(settings.count, |s| -> Result<Shadow> {
        let shadow_seed = seed.wrapping_add(s as u64);
        let (members, holdout) = half_split(corpus.labels(), train_indices, k, shadow_seed);
        if members.is_empty() || holdout.is_empty() {
            return Err(invalid("corpus too small for disjoint shadow halves"));
        }
        let texts = corpus.texts_at(&members);
        let y = corpus.labels_at(&members);
        let fitted = pipeline::fit(&texts, &y, k, &settings.pipeline, &settings.train)?;
        let released = release_for(
            &fitted,
            condition,
            &settings.train,
            &settings.cg,
            shadow_seed.wrapping_add(SHADOW_RELABEL_OFFSET),
        )?;
        let x_hold = fitted.featurize(&corpus.texts_at(&holdout));
        let mut features = features_for(&released, &fitted.x)?;
        features.extend(features_for(&released, &x_hold)?);
        let mut member_bits = vec![true; members.len()];
        member_bits.extend(std::iter::repeat_n(false, holdout.len()));
        let mut labels = y;
        labels.extend(corpus.labels_at(&holdout));
        Ok(Shadow {
            members,
            holdout,
            features,
            member_bits,
            labels,
        })
    });
    let shadows = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ShadowPool { condition, shadows })
}

/// Attack results on the target, split by whether the true label is the removed class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    /// Absent when the retained group lacks members or non-members.
    pub auc_retained: Option<f64>,
    pub auc_target: Option<f64>,
    pub n_retained_members: usize,
    pub n_retained_nonmembers: usize,
    pub n_target_members: usize,
    pub n_target_nonmembers: usize,
    pub attacker_coef: Vec<f64>,
    pub attacker_intercept: f64,
}

fn group_auc(scores: &[f64], bits: &[bool], keep: impl Fn(usize) -> bool) -> (Option<f64>, usize, usize) {
    let idx: Vec<usize> = (0..scores.len()).filter(|&i| keep(i)).collect();
    let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    let b: Vec<bool> = idx.iter().map(|&i| bits[i]).collect();
    let pos = b.iter().filter(|&&v| v).count();
    (roc_auc(&s, &b).ok(), pos, b.len() - pos)
}

/// Scores the attacker on the target's members and non-members.
///
/// `x_eval` holds both groups; `member_bits` marks the members and `labels`
/// carries true labels, which decide the retained / removed-class filter.
pub fn evaluate_target(
    attacker: &Attacker,
    target: &ReleasedModel,
    x_eval: &FeatureMatrix,
    labels: &[usize],
    member_bits: &[bool],
    c: usize,
) -> Result<MiaReport> {
    let scores = attack_scores(attacker, target, x_eval)?;
    if labels.len() != scores.len() || member_bits.len() != scores.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: labels.len().min(member_bits.len()),
        });
    }
    let (auc_retained, rm, rn) = group_auc(&scores, member_bits, |i| labels[i] != c);
    let (auc_target, tm, tn) = group_auc(&scores, member_bits, |i| labels[i] == c);
    Ok(MiaReport {
        auc_retained,
        auc_target,
        n_retained_members: rm,
        n_retained_nonmembers: rn,
        n_target_members: tm,
        n_target_nonmembers: tn,
        attacker_coef: attacker.coef.clone(),
        attacker_intercept: attacker.intercept,
    })
}

/// Attacker membership scores for every row under `target`.
pub fn attack_scores(attacker: &Attacker, target: &ReleasedModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let feats = features_for(target, x)?;
    if let Some(f) = feats.first() {
        if f.len() != attacker.dim() {
            return Err(Error::Dimension {
                expected: attacker.dim(),
                got: f.len(),
            });
        }
    }
    Ok(par::map_slice(&feats, |f| attacker.score(f)))
}

/// The default noise grid: 0 followed by 25 log-spaced points in `[1e-3, 1e3]`.
pub fn default_sigma_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..25).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 24.0)))
        .collect()
}

/// One regularization setting in a noise sweep: the released target and the
/// attacker trained for it.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub c_value: f64,
    pub target: ReleasedModel,
    pub attacker: Attacker,
    pub x_eval: FeatureMatrix,
    pub labels: Vec<usize>,
    pub member_bits: Vec<bool>,
    /// Rows of `x_eval` used for retained-class accuracy (the test documents).
    pub accuracy_rows: Vec<usize>,
}

/// Mean retained-class AUC and accuracy at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub c_value: f64,
    pub sigma: f64,
    pub auc_retained: f64,
    pub accuracy: f64,
}

/// Smallest grid noise meeting an AUC target, and the accuracy it costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c_value: f64,
    pub tau: f64,
    pub sigma_star: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc_retained: Option<f64>,
}

/// Evaluates every cell at every σ (averaging over `noise_seeds`), then picks
/// `σ*` per `(C, τ)` as the smallest σ with mean `AUC_ret ≤ τ`.
///
/// σ = 0 uses the noiseless release.
pub fn noise_sweep(
    cells: &[SweepCell],
    removed_class: usize,
    tau_grid: &[f64],
    sigma_grid: &[f64],
    noise_seeds: &[u64],
) -> Result<(Vec<SweepRow>, Vec<NoisePoint>)> {
    if tau_grid.is_empty() || sigma_grid.is_empty() || noise_seeds.is_empty() {
        return Err(invalid("noise sweep grids must be non-empty"));
    }
    if sigma_grid.windows(2).any(|w| w[0] >= w[1]) || sigma_grid[0] < 0.0 {
        return Err(invalid("sigma grid must be non-negative and strictly ascending"));
    }
    let mut points = Vec::new();
    for cell in cells {
        let jobs: Vec<(f64, u64)> = sigma_grid
            .iter()
            .flat_map(|&s| {
                let seeds: &[u64] = if s == 0.0 { &noise_seeds[..1] } else { noise_seeds };
                seeds.iter().map(move |&seed| (s, seed))
            })
            .collect();
        let evals = par::map_slice(&jobs, |&(sigma, seed)| -> Result<(f64, f64)> {
            let target = cell.target.clone().with_noise(sigma, seed);
            let scores = attack_scores(&cell.attacker, &target, &cell.x_eval)?;
            let (auc, _, _) = group_auc(&scores, &cell.member_bits, |i| cell.labels[i] != removed_class);
            let auc = auc.ok_or_else(|| invalid("retained group lacks members or non-members"))?;
            let x_acc = cell.x_eval.select_rows(&cell.accuracy_rows);
            let y_acc: Vec<usize> = cell.accuracy_rows.iter().map(|&i| cell.labels[i]).collect();
            let acc = metrics::accuracy_excluding(&target, &x_acc, &y_acc, removed_class)?;
            Ok((auc, acc))
        });
        let evals = evals.into_iter().collect::<Result<Vec<_>>>()?;
        let mut at = 0;
        for &sigma in sigma_grid {
            let m = if sigma == 0.0 { 1 } else { noise_seeds.len() };
            let slice = &evals[at..at + m];
            at += m;
            points.push(NoisePoint {
                c_value: cell.c_value,
                sigma,
                auc_retained: slice.iter().map(|e| e.0).sum::<f64>() / m as f64,
                accuracy: slice.iter().map(|e| e.1).sum::<f64>() / m as f64,
            });
        }
    }
    let mut rows = Vec::new();
    for cell in cells {
        for &tau in tau_grid {
            let hit = points
                .iter()
                .filter(|p| p.c_value == cell.c_value)
                .find(|p| p.auc_retained <= tau);
            rows.push(SweepRow {
                c_value: cell.c_value,
                tau,
                sigma_star: hit.map(|p| p.sigma),
                accuracy: hit.map(|p| p.accuracy),
                auc_retained: hit.map(|p| p.auc_retained),
            });
        }
    }
    Ok((rows, points))
}
