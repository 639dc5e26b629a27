//! Versioned JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::DenseMat;
use crate::softmax::ModelParams;
use crate::tfidf::hex_digest;
use crate::unlearn::{LabelMap, ReleasedModel, RetrainedModel};

pub const MODEL_FORMAT: &str = "classunlearn-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model: weights row-major plus release metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub num_classes: usize,
    pub dim: usize,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub vocab_hash: String,
    pub active: Vec<bool>,
    #[serde(default)]
    pub removed_class: Option<usize>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
    /// Compacted-to-original label ids, for models retrained without a class.
    #[serde(default)]
    pub label_map: Option<Vec<usize>>,
}

impl ModelFile {
    pub fn from_params(params: &ModelParams, vocab_hash: &str) -> Self {
        Self::from_released(&ReleasedModel::unmasked(params.clone()), vocab_hash)
    }

    pub fn from_released(m: &ReleasedModel, vocab_hash: &str) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            num_classes: m.params.num_classes(),
            dim: m.params.dim(),
            lambda: m.params.lambda(),
            weights: m.params.weights().as_slice().to_vec(),
            vocab_hash: vocab_hash.to_string(),
            active: m.active.clone(),
            removed_class: m.removed_class,
            noise_sigma: m.noise_sigma,
            noise_seed: m.noise_seed,
            label_map: None,
        }
    }

    pub fn from_retrained(m: &RetrainedModel, vocab_hash: &str) -> Self {
        let mut f = Self::from_params(&m.params, vocab_hash);
        f.removed_class = Some(m.label_map.removed);
        f.label_map = Some(m.label_map.to_original.clone());
        f
    }

    fn check(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_FORMAT_VERSION {
            return Err(invalid(format!(
                "unsupported model file {} v{}",
                self.format, self.version
            )));
        }
        if self.active.len() != self.num_classes {
            return Err(invalid("active mask length differs from class count"));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        self.check()?;
        ModelParams::new(
            DenseMat::from_vec(self.num_classes, self.dim, self.weights.clone())?,
            self.lambda,
        )
    }

    pub fn released(&self) -> Result<ReleasedModel> {
        Ok(ReleasedModel {
            params: self.params()?,
            removed_class: self.removed_class,
            active: self.active.clone(),
            noise_sigma: self.noise_sigma,
            noise_seed: self.noise_seed,
        })
    }

    pub fn retrained(&self) -> Result<RetrainedModel> {
        let (Some(map), Some(removed)) = (&self.label_map, self.removed_class) else {
            return Err(invalid("model file carries no label map"));
        };
        Ok(RetrainedModel {
            params: self.params()?,
            label_map: LabelMap {
                removed,
                to_original: map.clone(),
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Writes the file and returns the SHA-256 of its bytes.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let json = self.to_json()?;
        std::fs::write(path, &json)?;
        Ok(hex_digest(json.as_bytes()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        f.check()?;
        Ok(f)
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex_digest(&std::fs::read(path)?))
}

/// SHA-256 of `bytes`, hex encoded.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex_digest(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unlearn::zero_class;

    #[test]
    fn released_round_trip() {
        let w = DenseMat::from_rows(&[vec![0.1, -0.25], vec![1.0 / 3.0, 2.0], vec![-7.5, 1e-17]]);
        let r = zero_class(&ModelParams::new(w, 0.1).unwrap(), 1).unwrap().with_noise(0.3, 9);
        let f = ModelFile::from_released(&r, "abc");
        let back: ModelFile = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        assert_eq!(back.released().unwrap(), r);
        assert_eq!(back.vocab_hash, "abc");
        assert!(back.retrained().is_err());
    }

    #[test]
    fn retrained_round_trip() {
        let m = RetrainedModel {
            params: ModelParams::new(DenseMat::from_rows(&[vec![1.0], vec![2.0]]), 0.5).unwrap(),
            label_map: LabelMap::without(3, 0),
        };
        let f = ModelFile::from_retrained(&m, "h");
        assert_eq!(f.retrained().unwrap(), m);
    }

    #[test]
    fn rejects_foreign_format() {
        let mut f = ModelFile::from_params(&ModelParams::zeros(2, 1, 1.0).unwrap(), "");
        f.version = 99;
        assert!(f.params().is_err());
    }
}
