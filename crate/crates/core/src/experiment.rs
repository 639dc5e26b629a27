//! Per-seed experiment cells shared by the CLI and the acceptance suite.
//!
//! A cell is one `(method, class, seed)` triple. Every random choice in a cell
//! derives from the cell seed plus a fixed offset, listed in [`offsets`].

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, LabeledCorpus, TrainValTest};
use crate::error::{invalid, Result};
use crate::linalg::FeatureMatrix;
use crate::metrics::{self, KsResult};
use crate::pipeline::{self, FittedPipeline, UnlearnMethod, Unlearned};
use crate::privacy::{self, Attacker, Condition, MiaReport, ShadowSettings, SweepCell};
use crate::softmax::{ModelParams, TrainConfig, TrainReport};
use crate::tfidf::{self, PipelineConfig, Vocabulary};
use crate::unlearn::{self, CgConfig, ReleasedModel, RetrainedModel};

/// Offsets added to the cell seed for each random stream.
pub mod offsets {
    pub const SPLIT: u64 = 0;
    pub const RELABEL: u64 = 1000;
    pub const SHADOW: u64 = 2000;
    pub const NOISE: u64 = 3000;
}

/// Settings common to every cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub cg: CgConfig,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub shadows: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            cg: CgConfig::default(),
            test_fraction: 0.2,
            val_fraction: 0.0,
            shadows: 10,
        }
    }
}

impl Settings {
    pub fn shadow_settings(&self) -> ShadowSettings {
        ShadowSettings {
            pipeline: self.pipeline.clone(),
            train: self.train.clone(),
            cg: self.cg,
            count: self.shadows,
        }
    }
}

/// A split corpus with the target pipeline fitted on its training part.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub split: TrainValTest,
    pub fitted: FittedPipeline,
    pub x_test: FeatureMatrix,
    pub y_test: Vec<usize>,
}

impl Prepared {
    pub fn num_classes(&self) -> usize {
        self.fitted.num_classes()
    }

    /// Test rows whose true label is `c`.
    pub fn test_rows_of(&self, c: usize) -> Vec<usize> {
        (0..self.y_test.len()).filter(|&i| self.y_test[i] == c).collect()
    }
}

/// Splits `corpus` with the cell seed and fits the target pipeline.
pub fn prepare(corpus: &LabeledCorpus, settings: &Settings, seed: u64) -> Result<Prepared> {
    let split = corpus::split_train_test(
        corpus,
        settings.test_fraction,
        settings.val_fraction,
        seed.wrapping_add(offsets::SPLIT),
    )?;
    let texts = corpus.texts_at(&split.train);
    let y = corpus.labels_at(&split.train);
    let fitted = pipeline::fit(&texts, &y, corpus.num_classes(), &settings.pipeline, &settings.train)?;
    Ok(finish(corpus, split, fitted, seed))
}

/// Rebuilds a [`Prepared`] from a saved vocabulary and model.
///
/// The split is recomputed from the seed, so it matches the one used at
/// training time for the same corpus and fractions.
pub fn restore(
    corpus: &LabeledCorpus,
    settings: &Settings,
    seed: u64,
    vocab: Vocabulary,
    model: ModelParams,
) -> Result<Prepared> {
    let split = corpus::split_train_test(
        corpus,
        settings.test_fraction,
        settings.val_fraction,
        seed.wrapping_add(offsets::SPLIT),
    )?;
    if model.num_classes() != corpus.num_classes() || model.dim() != vocab.len() {
        return Err(invalid(format!(
            "model shape {}x{} does not match corpus ({} classes) and vocabulary ({} terms)",
            model.num_classes(),
            model.dim(),
            corpus.num_classes(),
            vocab.len()
        )));
    }
    let x = tfidf::transform(&vocab, &corpus.texts_at(&split.train));
    let fitted = FittedPipeline {
        vocab,
        x,
        y: corpus.labels_at(&split.train),
        model,
        report: TrainReport {
            iterations: 0,
            evaluations: 0,
            loss: f64::NAN,
            grad_inf_norm: f64::NAN,
            converged: true,
        },
        train_secs: 0.0,
    };
    Ok(finish(corpus, split, fitted, seed))
}

fn finish(corpus: &LabeledCorpus, split: TrainValTest, fitted: FittedPipeline, seed: u64) -> Prepared {
    let x_test = fitted.featurize(&corpus.texts_at(&split.test));
    let y_test = corpus.labels_at(&split.test);
    Prepared {
        seed,
        split,
        fitted,
        x_test,
        y_test,
    }
}

/// Serves the deletion of `c` with `method`, using the cell's relabel seed.
pub fn run_method(prepared: &Prepared, method: UnlearnMethod, c: usize, settings: &Settings) -> Result<Unlearned> {
    pipeline::unlearn(
        &prepared.fitted,
        method,
        c,
        &settings.cg,
        &settings.train,
        prepared.seed.wrapping_add(offsets::RELABEL),
    )
}

/// Accuracy of the pre-unlearning model over all test documents and over the
/// non-`c` test documents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreMetrics {
    pub accuracy_all: f64,
    pub accuracy_excluding: f64,
}

pub fn pre_metrics(prepared: &Prepared, c: usize) -> Result<PreMetrics> {
    let pre = ReleasedModel::unmasked(prepared.fitted.model.clone());
    let pred = pre.predict(&prepared.x_test)?;
    Ok(PreMetrics {
        accuracy_all: metrics::accuracy(&pred, &prepared.y_test)?,
        accuracy_excluding: metrics::accuracy_excluding(&pre, &prepared.x_test, &prepared.y_test, c)?,
    })
}

/// Utility metrics of one released model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityMetrics {
    pub accuracy_excluding: f64,
    /// Against the golden model on the deleted class's test documents.
    pub agreement: Option<f64>,
    /// Retained test margins under the pre model restricted to the released
    /// label space vs under the released model.
    pub ks: KsResult,
}

/// Retained-class margins of the test set under `model`, with true labels as reference.
pub fn retained_margins(model: &ReleasedModel, prepared: &Prepared, c: usize) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..prepared.y_test.len()).filter(|&i| prepared.y_test[i] != c).collect();
    let x = prepared.x_test.select_rows(&rows);
    let probs = model.predict_proba(&x)?;
    rows.iter()
        .zip(&probs)
        .map(|(&i, p)| metrics::margin(p, prepared.y_test[i]))
        .collect()
}

pub fn utility(
    prepared: &Prepared,
    released: &ReleasedModel,
    golden: Option<&RetrainedModel>,
    c: usize,
) -> Result<UtilityMetrics> {
    let accuracy_excluding = metrics::accuracy_excluding(released, &prepared.x_test, &prepared.y_test, c)?;
    let rows_c = prepared.test_rows_of(c);
    let agreement = match golden {
        Some(g) if !rows_c.is_empty() => Some(metrics::agreement_on_deleted(
            released,
            g,
            &prepared.x_test.select_rows(&rows_c),
        )?),
        _ => None,
    };
    let pre = unlearn::zero_class(&prepared.fitted.model, c)?;
    let before = retained_margins(&pre, prepared, c)?;
    let after = retained_margins(released, prepared, c)?;
    Ok(UtilityMetrics {
        accuracy_excluding,
        agreement,
        ks: metrics::ks_two_sample(&before, &after)?,
    })
}

/// The target's members (training documents) followed by its non-members
/// (test documents), featurized with the target's vocabulary.
pub struct EvalSet {
    pub x: FeatureMatrix,
    pub labels: Vec<usize>,
    pub member_bits: Vec<bool>,
}

pub fn eval_set(prepared: &Prepared, corpus: &LabeledCorpus) -> EvalSet {
    let mut rows = prepared.split.train.clone();
    rows.extend_from_slice(&prepared.split.test);
    let x = prepared.fitted.featurize(&corpus.texts_at(&rows));
    let mut member_bits = vec![true; prepared.split.train.len()];
    member_bits.extend(std::iter::repeat_n(false, prepared.split.test.len()));
    EvalSet {
        x,
        labels: corpus.labels_at(&rows),
        member_bits,
    }
}

/// Trains the shadow attacker for `condition`.
///
/// Shadows resample the target's own training documents.
pub fn condition_attacker(
    corpus: &LabeledCorpus,
    prepared: &Prepared,
    condition: Condition,
    settings: &Settings,
) -> Result<Attacker> {
    let pool = privacy::build_shadow_pool(
        corpus,
        &prepared.split.train,
        &settings.shadow_settings(),
        condition,
        prepared.seed.wrapping_add(offsets::SHADOW),
    )?;
    let (features, bits) = pool.pooled();
    privacy::train_attacker(&features, &bits)
}

/// Runs the membership attack for one condition against its target.
pub fn mia(
    corpus: &LabeledCorpus,
    prepared: &Prepared,
    eval: &EvalSet,
    condition: Condition,
    target: &ReleasedModel,
    c: usize,
    settings: &Settings,
) -> Result<(Attacker, MiaReport)> {
    let attacker = condition_attacker(corpus, prepared, condition, settings)?;
    let report = privacy::evaluate_target(&attacker, target, &eval.x, &eval.labels, &eval.member_bits, c)?;
    Ok((attacker, report))
}

/// Builds one noise-sweep cell at inverse regularization `c_value`: refits the
/// target at that strength, applies `method` and trains the matching attacker.
pub fn sweep_cell(
    corpus: &LabeledCorpus,
    settings: &Settings,
    seed: u64,
    method: UnlearnMethod,
    c: usize,
    c_value: f64,
) -> Result<SweepCell> {
    let mut s = settings.clone();
    s.train.c = c_value;
    s.train.validate()?;
    let prepared = prepare(corpus, &s, seed)?;
    let released = run_method(&prepared, method, c, &s)?.released;
    let eval = eval_set(&prepared, corpus);
    let attacker = condition_attacker(corpus, &prepared, Condition::Unlearned { method, class: c }, &s)?;
    let n_train = prepared.split.train.len();
    Ok(SweepCell {
        c_value,
        target: released,
        attacker,
        x_eval: eval.x,
        labels: eval.labels,
        member_bits: eval.member_bits,
        accuracy_rows: (n_train..n_train + prepared.split.test.len()).collect(),
    })
}

/// Noise seeds for a sweep in cell `seed`.
pub fn noise_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| seed.wrapping_add(offsets::NOISE).wrapping_add(i)).collect()
}

/// Wall-clock seconds of the stages the bench compares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub method: UnlearnMethod,
    pub runs: Vec<f64>,
    pub median: f64,
}

/// Runs `method` `repeats` times on the same features and reports the median.
pub fn time_method(
    prepared: &Prepared,
    method: UnlearnMethod,
    c: usize,
    settings: &Settings,
    repeats: usize,
) -> Result<Timing> {
    if repeats == 0 {
        return Err(invalid("bench needs at least one repeat"));
    }
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = run_method(prepared, method, c, settings)?;
        runs.push(start.elapsed().as_secs_f64());
        drop(out);
    }
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if repeats % 2 == 1 {
        sorted[repeats / 2]
    } else {
        0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2])
    };
    Ok(Timing { method, runs, median })
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    fn small() -> LabeledCorpus {
        synth::generate(&SynthConfig { docs_per_class: 40, ..Default::default() }, 5).unwrap()
    }

    #[test]
    fn restore_matches_prepare() {
        let corpus = small();
        let s = Settings::default();
        let p = prepare(&corpus, &s, 3).unwrap();
        let r = restore(&corpus, &s, 3, p.fitted.vocab.clone(), p.fitted.model.clone()).unwrap();
        assert_eq!(p.split, r.split);
        assert_eq!(p.fitted.x, r.fitted.x);
        assert_eq!(p.x_test, r.x_test);
    }

    #[test]
    fn eval_set_marks_train_rows_as_members() {
        let corpus = small();
        let p = prepare(&corpus, &Settings::default(), 0).unwrap();
        let e = eval_set(&p, &corpus);
        let n = p.split.train.len();
        assert_eq!(e.member_bits.iter().filter(|&&b| b).count(), n);
        assert_eq!(e.x.n_rows(), n + p.split.test.len());
        assert_eq!(&e.labels[n..], &p.y_test[..]);
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[2.0]), Some((2.0, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
