//! Text to sparse TF-IDF features.
//!
//! Tokens are lowercase runs of Unicode alphanumerics, at least two characters
//! long and not in the bundled English stopword list. Term weights are
//! `(1 + ln tf) · idf` with `idf = ln((1 + N) / (1 + df)) + 1`, and rows are
//! L2-normalized. Both the smoothing and the normalization can be switched off.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use crate::linalg::FeatureMatrix;

use crate::error::{Error, Result};
use crate::par;

const STOPWORDS_EN: &str = include_str!("../assets/stopwords_en.txt");
pub const STOPWORDS_ID: &str = "en-v1";
pub const VOCAB_FORMAT_VERSION: u32 = 1;

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_EN
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Settings for vocabulary fitting and weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub min_df: usize,
    pub max_features: usize,
    pub normalize: bool,
    pub sublinear_tf: bool,
    pub smooth_idf: bool,
    pub stopwords: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_df: 2,
            max_features: 50_000,
            normalize: true,
            sublinear_tf: true,
            smooth_idf: true,
            stopwords: STOPWORDS_ID.to_string(),
        }
    }
}

/// Splits text into lowercase tokens, dropping short tokens and stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    let stop = stopwords();
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2 && !stop.contains(t.as_str()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEntry {
    pub term: String,
    pub df: usize,
    pub idf: f64,
}

/// Fitted term → column mapping with document frequencies and idf weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    pub config: PipelineConfig,
    pub n_docs: usize,
    /// Entries in column order.
    pub terms: Vec<TermEntry>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_parts(config: PipelineConfig, n_docs: usize, terms: Vec<TermEntry>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.term.clone(), i as u32))
            .collect();
        Self {
            version: VOCAB_FORMAT_VERSION,
            config,
            n_docs,
            terms,
            index,
        }
    }

    /// Number of columns d.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&c| c as usize)
    }

    pub fn df(&self, term: &str) -> Option<usize> {
        self.column(term).map(|c| self.terms[c].df)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(s)?;
        if v.version != VOCAB_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported vocabulary format version {}",
                v.version
            )));
        }
        Ok(Self::from_parts(v.config, v.n_docs, v.terms))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = self.to_json().expect("vocabulary serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Fits a vocabulary on `texts`.
///
/// Columns are ordered by descending total term count, ties by term.
pub fn fit_vocabulary<S: AsRef<str> + Sync>(texts: &[S], config: &PipelineConfig) -> Result<Vocabulary> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a vocabulary on zero documents".into()));
    }
    if config.stopwords != STOPWORDS_ID {
        return Err(Error::InvalidArgument(format!(
            "unknown stopword list {:?} (available: {STOPWORDS_ID})",
            config.stopwords
        )));
    }
    let tokenized = par::map_slice(texts, |t| tokenize(t.as_ref()));
    let mut df: HashMap<&str, usize> = HashMap::new();
    let mut cf: HashMap<&str, usize> = HashMap::new();
    for doc in &tokenized {
        let mut seen = HashSet::new();
        for tok in doc {
            *cf.entry(tok).or_default() += 1;
            if seen.insert(tok.as_str()) {
                *df.entry(tok).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize, usize)> = df
        .into_iter()
        .filter(|&(_, d)| d >= config.min_df)
        .map(|(t, d)| (t, d, cf[t]))
        .collect();
    kept.sort_unstable_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));
    kept.truncate(config.max_features);
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let n = texts.len();
    let terms = kept
        .into_iter()
        .map(|(t, d, _)| TermEntry {
            term: t.to_string(),
            df: d,
            idf: idf(n, d, config.smooth_idf),
        })
        .collect();
    Ok(Vocabulary::from_parts(config.clone(), n, terms))
}

fn idf(n_docs: usize, df: usize, smooth: bool) -> f64 {
    if smooth {
        ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    } else {
        (n_docs as f64 / df as f64).ln() + 1.0
    }
}

/// Maps texts to TF-IDF rows. Out-of-vocabulary tokens are ignored; a document
/// without known terms becomes an all-zero row.
pub fn transform<S: AsRef<str> + Sync>(vocab: &Vocabulary, texts: &[S]) -> FeatureMatrix {
    let cfg = &vocab.config;
    let rows = par::map_slice(texts, |t| {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for tok in tokenize(t.as_ref()) {
            if let Some(&c) = vocab.index.get(&tok) {
                *counts.entry(c).or_default() += 1;
            }
        }
        let mut row: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(c, tf)| {
                let tfw = if cfg.sublinear_tf {
                    1.0 + (tf as f64).ln()
                } else {
                    tf as f64
                };
                (c, tfw * vocab.terms[c as usize].idf)
            })
            .collect();
        row.sort_unstable_by_key(|&(c, _)| c);
        if cfg.normalize {
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|(_, v)| *v /= norm);
            }
        }
        row
    });
    FeatureMatrix::from_rows(vocab.len(), rows).expect("tf-idf rows are finite and sorted")
}

/// Debug export of a feature matrix as JSON with the three CSR arrays.
pub fn write_csr(x: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let doc = serde_json::json!({
        "n_rows": x.n_rows(),
        "n_cols": x.n_cols(),
        "row_offsets": x.row_ptr(),
        "col_ids": x.col_idx(),
        "values": x.values(),
    });
    std::fs::write(path, serde_json::to_string(&doc)?)?;
    Ok(())
}
