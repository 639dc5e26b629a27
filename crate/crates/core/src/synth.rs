//! Synthetic topic corpora for tests, benchmarks and the bundled fixture.
//!
//! Every class owns a topic vocabulary. A document of class `k` picks one
//! secondary class at random and draws each token from its own topic, the
//! secondary topic, or a shared background pool. Within a pool, word ranks
//! follow a Zipf law, so many words are rare.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledCorpus;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub docs_per_class: usize,
    pub topic_words: usize,
    pub background_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token comes from the document's own topic.
    pub own_topic: f64,
    /// Probability that a token comes from the secondary topic.
    pub secondary_topic: f64,
    pub zipf_exponent: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            docs_per_class: 500,
            topic_words: 400,
            background_words: 600,
            min_len: 30,
            max_len: 90,
            own_topic: 0.4,
            secondary_topic: 0.25,
            zipf_exponent: 1.05,
        }
    }
}

fn class_name(k: usize) -> String {
    format!("topic{k:02}")
}

/// Pronounceable pseudo-word for `(pool, index)`; distinct inputs give distinct words.
fn word(pool: usize, index: usize) -> String {
    const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut out = String::new();
    // prefix identifies the pool, suffix the index; both base-60 syllables
    for mut v in [pool + 60, index] {
        let mut syl = Vec::new();
        loop {
            let s = v % 60;
            syl.push(format!("{}{}", ONSETS[s / 5], VOWELS[s % 5]));
            v /= 60;
            if v == 0 {
                break;
            }
        }
        syl.reverse();
        out.push_str(&syl.concat());
        out.push('x');
    }
    out.pop();
    out
}

/// Generates a labeled corpus; identical `(config, seed)` give identical output.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<LabeledCorpus> {
    if config.classes < 2 {
        return Err(invalid("synthetic corpus needs at least two classes"));
    }
    if config.docs_per_class == 0 || config.topic_words == 0 || config.background_words == 0 {
        return Err(invalid("synthetic corpus sizes must be positive"));
    }
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(invalid("document length range is empty"));
    }
    let p_sum = config.own_topic + config.secondary_topic;
    if !(0.0..=1.0).contains(&config.own_topic) || !(0.0..=1.0).contains(&config.secondary_topic) || p_sum > 1.0 {
        return Err(invalid("topic probabilities must lie in [0, 1] and sum to at most 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topic = Zipf::new(config.topic_words as f64, config.zipf_exponent).map_err(|e| invalid(e.to_string()))?;
    let background =
        Zipf::new(config.background_words as f64, config.zipf_exponent).map_err(|e| invalid(e.to_string()))?;
    let k = config.classes;
    // background words live in pool k
    let mut pairs = Vec::with_capacity(k * config.docs_per_class);
    for i in 0..k * config.docs_per_class {
        let class = i % k;
        let other = {
            let r = rng.random_range(0..k - 1);
            if r >= class {
                r + 1
            } else {
                r
            }
        };
        let len = rng.random_range(config.min_len..=config.max_len);
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let u: f64 = rng.random();
            let (pool, idx) = if u < config.own_topic {
                (class, topic.sample(&mut rng) as usize - 1)
            } else if u < p_sum {
                (other, topic.sample(&mut rng) as usize - 1)
            } else {
                (k, background.sample(&mut rng) as usize - 1)
            };
            tokens.push(word(pool, idx));
        }
        pairs.push((tokens.join(" "), class_name(class)));
    }
    LabeledCorpus::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tfidf::tokenize;
    use std::collections::HashSet;

    #[test]
    fn words_are_distinct_tokens() {
        let mut seen = HashSet::new();
        for pool in 0..6 {
            for idx in 0..800 {
                let w = word(pool, idx);
                assert_eq!(tokenize(&w), vec![w.clone()], "{w}");
                assert!(seen.insert(w));
            }
        }
    }

    #[test]
    fn generate_is_deterministic_and_balanced() {
        let cfg = SynthConfig { docs_per_class: 20, ..Default::default() };
        let a = generate(&cfg, 1).unwrap();
        assert_eq!(a, generate(&cfg, 1).unwrap());
        assert_ne!(a, generate(&cfg, 2).unwrap());
        assert_eq!(a.len(), 80);
        assert_eq!(a.num_classes(), 4);
        for k in 0..4 {
            assert_eq!(a.labels().iter().filter(|&&y| y == k).count(), 20);
        }
    }

    #[test]
    fn rejects_bad_probabilities() {
        let cfg = SynthConfig { own_topic: 0.8, secondary_topic: 0.5, ..Default::default() };
        assert!(generate(&cfg, 0).is_err());
    }
}
