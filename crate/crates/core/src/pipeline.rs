//! Featurize + train, and the three ways of producing a released model after
//! a class deletion request.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::FeatureMatrix;
use crate::softmax::{self, ModelParams, TrainConfig, TrainReport};
use crate::tfidf::{self, PipelineConfig, Vocabulary};
use crate::unlearn::{
    golden_retrain, hessian_downweight, random_relabel_retrain, zero_class, CgConfig, ReleasedModel, RetrainedModel,
    UnlearnUpdate,
};

/// A vocabulary and model fitted on one set of training documents.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub vocab: Vocabulary,
    pub x: FeatureMatrix,
    pub y: Vec<usize>,
    pub model: ModelParams,
    pub report: TrainReport,
    pub train_secs: f64,
}

impl FittedPipeline {
    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    pub fn featurize<S: AsRef<str> + Sync>(&self, texts: &[S]) -> FeatureMatrix {
        tfidf::transform(&self.vocab, texts)
    }
}

/// Fits the TF-IDF vocabulary on `texts` and trains a `k`-class model.
pub fn fit<S: AsRef<str> + Sync>(
    texts: &[S],
    y: &[usize],
    k: usize,
    pipeline: &PipelineConfig,
    train: &TrainConfig,
) -> Result<FittedPipeline> {
    let vocab = tfidf::fit_vocabulary(texts, pipeline)?;
    let x = tfidf::transform(&vocab, texts);
    let start = Instant::now();
    let (model, report) = softmax::train_with_report(&x, y, k, train)?;
    Ok(FittedPipeline {
        vocab,
        x,
        y: y.to_vec(),
        model,
        report,
        train_secs: start.elapsed().as_secs_f64(),
    })
}

/// How a deletion request is served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlearnMethod {
    /// Hessian downweight followed by zeroing the class.
    Hessian,
    /// Retrain from scratch without the class.
    Golden,
    /// Relabel the class uniformly at random, then retrain.
    RandomRelabel,
}

impl UnlearnMethod {
    pub const ALL: [UnlearnMethod; 3] = [Self::Hessian, Self::Golden, Self::RandomRelabel];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hessian => "hessian",
            Self::Golden => "golden",
            Self::RandomRelabel => "random_relabel",
        }
    }
}

impl fmt::Display for UnlearnMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnlearnMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hessian" => Ok(Self::Hessian),
            "golden" | "retrain" => Ok(Self::Golden),
            "random_relabel" | "random" => Ok(Self::RandomRelabel),
            other => Err(invalid(format!(
                "unknown method {other:?} (expected hessian, golden or random_relabel)"
            ))),
        }
    }
}

/// Result of serving one deletion request.
#[derive(Debug, Clone)]
pub struct Unlearned {
    pub method: UnlearnMethod,
    pub class: usize,
    pub released: ReleasedModel,
    /// Set for the two retraining methods.
    pub retrained: Option<RetrainedModel>,
    /// Set for the Hessian method.
    pub update: Option<UnlearnUpdate>,
    /// The Hessian method's weights before the class row is zeroed.
    pub downweighted: Option<ModelParams>,
    /// Wall time to produce the released model, features excluded.
    pub secs: f64,
}

/// Produces the released model for deleting class `c` from `fitted`.
pub fn unlearn(
    fitted: &FittedPipeline,
    method: UnlearnMethod,
    c: usize,
    cg: &CgConfig,
    train: &TrainConfig,
    relabel_seed: u64,
) -> Result<Unlearned> {
    let k = fitted.num_classes();
    if c >= k {
        return Err(invalid(format!("class {c} out of range for {k} classes")));
    }
    let start = Instant::now();
    let (released, retrained, update, downweighted) = match method {
        UnlearnMethod::Hessian => {
            let (w, upd) = hessian_downweight(&fitted.model, &fitted.x, &fitted.y, c, cg)?;
            (zero_class(&w, c)?, None, Some(upd), Some(w))
        }
        UnlearnMethod::Golden => {
            let keep: Vec<usize> = (0..fitted.y.len()).filter(|&i| fitted.y[i] != c).collect();
            let x = fitted.x.select_rows(&keep);
            let y: Vec<usize> = keep.iter().map(|&i| fitted.y[i]).collect();
            let g = golden_retrain(&x, &y, c, k, train)?;
            (g.to_released()?, Some(g), None, None)
        }
        UnlearnMethod::RandomRelabel => {
            let g = random_relabel_retrain(&fitted.x, &fitted.y, c, k, relabel_seed, train)?;
            (g.to_released()?, Some(g), None, None)
        }
    };
    Ok(Unlearned {
        method,
        class: c,
        released,
        retrained,
        update,
        downweighted,
        secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in UnlearnMethod::ALL {
            assert_eq!(m.as_str().parse::<UnlearnMethod>().unwrap(), m);
        }
        assert!("nope".parse::<UnlearnMethod>().is_err());
    }
}
