//! Labeled document corpora, label spaces and deterministic splits.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Documents with label ids in `0..K`.
///
/// Label ids follow the lexicographic order of the label names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    docs: Vec<String>,
    labels: Vec<usize>,
    label_names: Vec<String>,
}

/// Partition of a set of indices by membership of one target class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub retained: Vec<usize>,
    pub deleted: Vec<usize>,
    pub target_class: usize,
}

/// Train / validation / test index lists, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainValTest {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Deserialize)]
struct Record {
    text: String,
    label: String,
}

impl LabeledCorpus {
    /// Builds a corpus, checking that every label id is in range and used.
    pub fn new(docs: Vec<String>, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        if docs.is_empty() {
            return Err(invalid("corpus has no documents"));
        }
        if docs.len() != labels.len() {
            return Err(Error::Dimension {
                expected: docs.len(),
                got: labels.len(),
            });
        }
        let k = label_names.len();
        let mut seen = vec![false; k];
        for &y in &labels {
            if y >= k {
                return Err(invalid(format!("label id {y} out of range for {k} labels")));
            }
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(invalid(format!(
                "label {:?} has no documents",
                label_names[missing]
            )));
        }
        Ok(Self {
            docs,
            labels,
            label_names,
        })
    }

    /// Builds a corpus from `(text, label name)` pairs, assigning ids by sorted name.
    pub fn from_pairs<I, S, L>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, L)>,
        S: Into<String>,
        L: Into<String>,
    {
        let (docs, names): (Vec<String>, Vec<String>) =
            pairs.into_iter().map(|(t, l)| (t.into(), l.into())).unzip();
        let label_names: Vec<String> = names
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let labels = names
            .iter()
            .map(|n| label_names.binary_search(n).expect("name from same set"))
            .collect();
        Self::new(docs, labels, label_names)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Number of labels K.
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn docs(&self) -> &[String] {
        &self.docs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    pub fn texts_at(&self, indices: &[usize]) -> Vec<&str> {
        indices.iter().map(|&i| self.docs[i].as_str()).collect()
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Writes the corpus as JSONL (`{"text": .., "label": ..}` per line).
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(File::create(path)?);
        for (doc, &y) in self.docs.iter().zip(&self.labels) {
            let line = serde_json::json!({ "text": doc, "label": self.label_names[y] });
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a JSONL corpus: one object per line with string fields `text` and `label`.
///
/// Blank lines are skipped. Line numbers in errors are 1-based.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push((rec.text, rec.label));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    LabeledCorpus::from_pairs(pairs)
}

/// Reads a CSV corpus with header `text,label`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut pairs = Vec::new();
    for (i, rec) in reader.deserialize::<Record>().enumerate() {
        // +2: header line, then 1-based numbering
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        pairs.push((rec.text, rec.label));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    LabeledCorpus::from_pairs(pairs)
}

/// Largest-remainder allocation of `total` slots proportionally to `counts`.
fn apportion(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 || total == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * total / n).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // remainder of c*total/n, compared exactly as integers
    order.sort_by(|&a, &b| {
        let ra = counts[a] * total % n;
        let rb = counts[b] * total % n;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &l in order.iter().take(total - assigned) {
        alloc[l] += 1;
    }
    alloc
}

/// Stratified train / validation / test split.
///
/// The test and validation sizes are `round(n * fraction)`, distributed over
/// labels by largest remainder, so every label's share of each split is within
/// one document of its share of the corpus. Every label keeps at least one
/// training document.
pub fn split_train_test(
    corpus: &LabeledCorpus,
    test_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<TrainValTest> {
    if !(0.0..1.0).contains(&test_fraction)
        || !(0.0..1.0).contains(&val_fraction)
        || test_fraction + val_fraction >= 1.0
    {
        return Err(invalid(format!(
            "split fractions must be non-negative with sum < 1 (test={test_fraction}, val={val_fraction})"
        )));
    }
    let n = corpus.len();
    let k = corpus.num_classes();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in corpus.labels.iter().enumerate() {
        by_label[y].push(i);
    }
    let counts: Vec<usize> = by_label.iter().map(Vec::len).collect();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_val = (n as f64 * val_fraction).round() as usize;
    let test_alloc = apportion(&counts, n_test);
    let val_alloc = apportion(&counts, n_val);

    let short: Vec<String> = (0..k)
        .filter(|&l| test_alloc[l] + val_alloc[l] >= counts[l])
        .map(|l| corpus.label_names[l].clone())
        .collect();
    if !short.is_empty() {
        return Err(Error::Stratify { labels: short });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = TrainValTest {
        train: Vec::with_capacity(n),
        val: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
    };
    for (l, mut idx) in by_label.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        let (t, rest) = idx.split_at(test_alloc[l]);
        let (v, tr) = rest.split_at(val_alloc[l]);
        split.test.extend_from_slice(t);
        split.val.extend_from_slice(v);
        split.train.extend_from_slice(tr);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Separates `indices` into the documents of class `c` and the rest,
/// preserving relative order.
pub fn split_by_class(labels: &[usize], indices: &[usize], c: usize) -> DatasetSplit {
    let (deleted, retained) = indices.iter().partition(|&&i| labels[i] == c);
    DatasetSplit {
        retained,
        deleted,
        target_class: c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn balanced(n: usize, k: usize) -> LabeledCorpus {
        LabeledCorpus::from_pairs((0..n).map(|i| (format!("doc {i}"), format!("l{}", i % k)))).unwrap()
    }

    #[test]
    fn jsonl_assigns_sorted_ids() {
        let f = write_tmp("{\"text\":\"b\",\"label\":\"tech\"}\n{\"text\":\"a\",\"label\":\"sports\"}\n");
        let c = load_jsonl(f.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.num_classes(), 2);
        assert_eq!(c.label_names(), ["sports", "tech"]);
        assert_eq!(c.labels(), [1, 0]);
        assert_eq!(c.docs()[0], "b");

        let f = write_tmp("{\"text\":\"a\",\"label\":\"sports\"}\n{\"text\":\"b\",\"label\":\"tech\"}\n");
        assert_eq!(load_jsonl(f.path()).unwrap().labels(), [0, 1]);
    }

    #[test]
    fn jsonl_singleton() {
        let f = write_tmp("{\"text\":\"x\",\"label\":\"only\"}\n");
        let c = load_jsonl(f.path()).unwrap();
        assert_eq!((c.len(), c.num_classes()), (1, 1));
    }

    #[test]
    fn jsonl_missing_label_names_line() {
        let f = write_tmp("{\"text\":\"x\"}\n");
        match load_jsonl(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("{\"text\":\"x\",\"label\":\"a\"}\nnot json\n");
        match load_jsonl(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_empty_file_is_error() {
        let f = write_tmp("");
        assert!(matches!(load_jsonl(f.path()), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn csv_with_quoting() {
        let f = write_tmp("text,label\n\"hello, world\",b\nplain,a\n");
        let c = load_csv(f.path()).unwrap();
        assert_eq!(c.docs()[0], "hello, world");
        assert_eq!(c.labels(), [1, 0]);
    }

    #[test]
    fn stratified_split_sizes() {
        let c = balanced(100, 2);
        let s = split_train_test(&c, 0.2, 0.1, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let test_per_class = c.labels_at(&s.test).iter().filter(|&&y| y == 0).count();
        assert_eq!(test_per_class, 10);
        assert_eq!(s, split_train_test(&c, 0.2, 0.1, 0).unwrap());
        assert_ne!(s, split_train_test(&c, 0.2, 0.1, 1).unwrap());
    }

    #[test]
    fn split_cannot_stratify_tiny() {
        let c = balanced(3, 3);
        match split_train_test(&c, 0.5, 0.0, 0) {
            Err(Error::Stratify { labels }) => assert!(!labels.is_empty()),
            other => panic!("expected stratify error, got {other:?}"),
        }
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let c = balanced(10, 2);
        assert!(split_train_test(&c, 0.6, 0.4, 0).is_err());
        assert!(split_train_test(&c, -0.1, 0.0, 0).is_err());
    }

    #[test]
    fn split_by_class_examples() {
        let all = |n: usize| (0..n).collect::<Vec<_>>();
        let s = split_by_class(&[0, 1, 0, 2], &all(4), 0);
        assert_eq!((s.deleted, s.retained), (vec![0, 2], vec![1, 3]));
        let s = split_by_class(&[1, 1], &all(2), 0);
        assert_eq!((s.deleted, s.retained), (vec![], vec![0, 1]));
        let s = split_by_class(&[0, 0], &all(2), 0);
        assert_eq!((s.deleted, s.retained), (vec![0, 1], vec![]));
    }

    #[test]
    fn new_rejects_unused_label() {
        assert!(LabeledCorpus::new(vec!["a".into()], vec![0], vec!["x".into(), "y".into()]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn split_is_stratified_partition(
                counts in prop::collection::vec(4usize..40, 2..6),
                test in 0.05f64..0.4,
                val in 0.0f64..0.2,
                seed in any::<u64>(),
            ) {
                let pairs: Vec<(String, String)> = counts
                    .iter()
                    .enumerate()
                    .flat_map(|(l, &c)| (0..c).map(move |i| (format!("d{i}"), format!("l{l}"))))
                    .collect();
                let corpus = LabeledCorpus::from_pairs(pairs).unwrap();
                let Ok(s) = split_train_test(&corpus, test, val, seed) else { return Ok(()); };
                let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..corpus.len()).collect::<Vec<_>>());
                if !s.test.is_empty() {
                    let t = s.test.len() as f64;
                    let n = corpus.len() as f64;
                    for l in 0..corpus.num_classes() {
                        let in_test = corpus.labels_at(&s.test).iter().filter(|&&y| y == l).count() as f64;
                        let total = counts[l] as f64;
                        prop_assert!((in_test / t - total / n).abs() <= 1.0 / t + 1e-12);
                    }
                }
            }

            #[test]
            fn split_by_class_composes(labels in prop::collection::vec(0usize..4, 0..50), c in 0usize..4) {
                let idx: Vec<usize> = (0..labels.len()).collect();
                let s = split_by_class(&labels, &idx, c);
                prop_assert_eq!(s.retained.len() + s.deleted.len(), labels.len());
                prop_assert!(s.deleted.iter().all(|&i| labels[i] == c));
                prop_assert!(s.retained.iter().all(|&i| labels[i] != c));
                let again = split_by_class(&labels, &s.retained, c);
                prop_assert!(again.deleted.is_empty());
            }
        }
    }
}
