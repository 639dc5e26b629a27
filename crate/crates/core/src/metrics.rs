//! Utility, agreement and distribution diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::FeatureMatrix;
use crate::softmax::PredictionVector;
use crate::unlearn::{ReleasedModel, RetrainedModel};

/// Fraction of examples whose label is not `c` that the released model gets right.
pub fn accuracy_excluding(model: &ReleasedModel, x_test: &FeatureMatrix, y_test: &[usize], c: usize) -> Result<f64> {
    let keep: Vec<usize> = (0..y_test.len()).filter(|&i| y_test[i] != c).collect();
    if keep.is_empty() {
        return Err(invalid(format!("no test example outside class {c}")));
    }
    let pred = model.predict(&x_test.select_rows(&keep))?;
    let correct = keep.iter().zip(&pred).filter(|(&i, &p)| y_test[i] == p).count();
    Ok(correct as f64 / keep.len() as f64)
}

/// Plain accuracy over every example.
pub fn accuracy(pred: &[usize], y: &[usize]) -> Result<f64> {
    if pred.len() != y.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: pred.len(),
        });
    }
    if y.is_empty() {
        return Err(invalid("accuracy of an empty set"));
    }
    Ok(pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
}

/// Fraction of deleted-class test documents on which both models predict the
/// same label. Golden predictions are mapped back to original label ids.
pub fn agreement_on_deleted(ours: &ReleasedModel, golden: &RetrainedModel, x_test_c: &FeatureMatrix) -> Result<f64> {
    if x_test_c.n_rows() == 0 {
        return Err(invalid("deleted-class test set is empty"));
    }
    let a = ours.predict(x_test_c)?;
    let b = golden.predict_original(x_test_c)?;
    Ok(agreement(&a, &b))
}

/// Fraction of positions where two label lists agree.
pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Margin of label `y`: its probability minus the largest other active one.
pub fn margin(p: &PredictionVector, y: usize) -> Result<f64> {
    if y >= p.probs.len() || !p.active[y] {
        return Err(invalid(format!("label {y} is not active")));
    }
    let best_other = p
        .probs
        .iter()
        .zip(&p.active)
        .enumerate()
        .filter(|&(k, (_, &a))| a && k != y)
        .map(|(_, (&v, _))| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if best_other == f64::NEG_INFINITY {
        // single active class
        return Ok(p.probs[y]);
    }
    Ok(p.probs[y] - best_other)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginTag {
    True,
    Reassigned,
}

/// One margin observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSample {
    pub margin: f64,
    pub reference: usize,
    pub tag: MarginTag,
}

/// Margins against per-example reference labels.
pub fn margins(p: &[PredictionVector], reference: &[usize], tag: MarginTag) -> Result<Vec<MarginSample>> {
    p.iter()
        .zip(reference)
        .map(|(pv, &y)| {
            Ok(MarginSample {
                margin: margin(pv, y)?,
                reference: y,
                tag,
            })
        })
        .collect()
}

/// Bin counts over `[-1, 1]` with width 0.05 (40 bins; 1.0 falls in the last).
pub fn margin_histogram(values: &[f64]) -> Vec<(f64, usize)> {
    const WIDTH: f64 = 0.05;
    const BINS: usize = 40;
    let mut counts = vec![0usize; BINS];
    for &v in values {
        let b = (((v + 1.0) / WIDTH).floor().max(0.0) as usize).min(BINS - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, n)| (-1.0 + b as f64 * WIDTH, n))
        .collect()
}

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Two-sample KS test with the asymptotic Kolmogorov p-value at effective
/// size `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("KS test needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("KS sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let p = kolmogorov_q(en * d).clamp(0.0, 1.0);
    Ok(KsResult {
        statistic: d,
        p_value: p,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form, fast for small λ
        let pi = std::f64::consts::PI;
        let y = (-pi * pi / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..20).map(|k| y.powi((2 * k + 1) * (2 * k + 1))).sum();
        1.0 - (2.0 * pi).sqrt() / lambda * s
    } else {
        let x = (-2.0 * lambda * lambda).exp();
        let mut s = 0.0;
        let mut sign = 1.0;
        for j in 1..=100i32 {
            let term = x.powi(j * j);
            s += sign * term;
            if term < 1e-17 {
                break;
            }
            sign = -sign;
        }
        2.0 * s
    }
}
