//! Labeled document corpora: loading, class statistics, title composition
//! and stratified fold assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default class-size threshold below which a class counts as low-resource.
pub const DEFAULT_LOW_RESOURCE_THRESHOLD: usize = 500;

const CORPUS_KEYS: [&str; 4] = ["id", "title", "text", "label"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has empty text")]
    EmptyText(String),
    #[error("corpus is empty")]
    Empty,
    #[error("class `{class}` has {count} documents, fewer than the {k} folds requested")]
    ClassTooSmall {
        class: String,
        count: usize,
        k: usize,
    },
    #[error("number of folds must be at least 1")]
    ZeroFolds,
}

/// One labeled example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    pub label: String,
}

/// An ordered collection of documents together with its sorted label set.
///
/// The position of a label in `label_set` is its class index everywhere
/// downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    documents: Vec<Document>,
    label_set: Vec<String>,
}

impl LabeledCorpus {
    /// Builds a corpus, checking id uniqueness and non-empty text.
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        if documents.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(doc.id.clone()));
            }
        }
        let label_set: BTreeSet<&str> = documents.iter().map(|d| d.label.as_str()).collect();
        let label_set = label_set.into_iter().map(str::to_owned).collect();
        Ok(Self {
            documents,
            label_set,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set
            .binary_search_by(|l| l.as_str().cmp(label))
            .ok()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

/// Reads a JSON Lines corpus. Blank lines are skipped; unknown keys are
/// reported through `log::warn!` and otherwise ignored.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<LabeledCorpus, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut documents = Vec::new();
    let mut warned = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        documents.push(parse_line(&line, line_no, &mut warned)?);
    }
    LabeledCorpus::new(documents)
}

fn parse_line(
    line: &str,
    line_no: usize,
    warned: &mut HashSet<String>,
) -> Result<Document, CorpusError> {
    let malformed = |message: String| CorpusError::Malformed {
        line: line_no,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| malformed("expected a JSON object".into()))?;
    for key in object.keys() {
        if !CORPUS_KEYS.contains(&key.as_str()) && warned.insert(key.clone()) {
            log::warn!("line {line_no}: ignoring unknown key `{key}`");
        }
    }
    let field = |key: &str| -> Result<String, CorpusError> {
        match object.get(key) {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(malformed(format!("key `{key}` must be a string"))),
            None => Err(malformed(format!("missing key `{key}`"))),
        }
    };
    let doc = Document {
        id: field("id")?,
        title: field("title")?,
        text: field("text")?,
        label: field("label")?,
    };
    if doc.text.trim().is_empty() {
        return Err(malformed(format!("document `{}` has empty text", doc.id)));
    }
    Ok(doc)
}

/// Writes documents as JSON Lines in the format read by [`load_corpus`].
pub fn write_corpus<'a>(
    path: impl AsRef<Path>,
    documents: impl IntoIterator<Item = &'a Document>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for doc in documents {
        let line = serde_json::to_string(doc).expect("documents always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Per-class document counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassStats {
    pub counts: BTreeMap<String, usize>,
    pub low_resource_threshold: usize,
}

impl ClassStats {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn max_count(&self) -> usize {
        self.counts.values().copied().max().unwrap_or(0)
    }

    /// Number of classes with strictly more than `n` documents.
    pub fn classes_above(&self, n: usize) -> usize {
        self.counts.values().filter(|&&c| c > n).count()
    }

    /// Total number of documents belonging to low-resource classes.
    pub fn low_resource_documents(&self) -> usize {
        self.counts
            .values()
            .filter(|&&c| c < self.low_resource_threshold)
            .sum()
    }
}

pub fn class_stats(corpus: &LabeledCorpus, threshold: usize) -> ClassStats {
    let mut counts = BTreeMap::new();
    for doc in corpus.documents() {
        *counts.entry(doc.label.clone()).or_insert(0) += 1;
    }
    ClassStats {
        counts,
        low_resource_threshold: threshold,
    }
}

/// Labels whose count is strictly below the threshold.
pub fn low_resource_labels(stats: &ClassStats) -> BTreeSet<String> {
    stats
        .counts
        .iter()
        .filter(|(_, &c)| c < stats.low_resource_threshold)
        .map(|(label, _)| label.clone())
        .collect()
}

/// Prepends the title to the text as its first sentence.
///
/// A `". "` separator is used unless the title already ends in `.`, `!` or
/// `?`, in which case a single space suffices.
pub fn compose_title_text(title: &str, text: &str) -> String {
    let title = title.trim_end();
    if title.is_empty() {
        return text.to_owned();
    }
    if title.ends_with(['.', '!', '?']) {
        format!("{title} {text}")
    } else {
        format!("{title}. {text}")
    }
}

/// Assignment of every document to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of: HashMap<String, usize>,
    pub k: usize,
}

impl FoldAssignment {
    pub fn fold(&self, id: &str) -> Option<usize> {
        self.fold_of.get(id).copied()
    }

    /// Document ids of fold `i`, in corpus order.
    pub fn members<'a>(&self, corpus: &'a LabeledCorpus, i: usize) -> Vec<&'a Document> {
        corpus
            .documents()
            .iter()
            .filter(|d| self.fold(&d.id) == Some(i))
            .collect()
    }
}

/// Stratified k-fold assignment.
///
/// Each class is shuffled with a seeded generator and dealt round-robin over
/// the folds. The dealing position carries over from one class to the next
/// (classes in label order) so that overall fold sizes also stay balanced.
pub fn stratified_folds(
    corpus: &LabeledCorpus,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, CorpusError> {
    if k == 0 {
        return Err(CorpusError::ZeroFolds);
    }
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for doc in corpus.documents() {
        by_class
            .entry(doc.label.as_str())
            .or_default()
            .push(doc.id.as_str());
    }
    if let Some((class, ids)) = by_class.iter().find(|(_, ids)| ids.len() < k) {
        return Err(CorpusError::ClassTooSmall {
            class: class.to_string(),
            count: ids.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = HashMap::with_capacity(corpus.len());
    let mut next = 0usize;
    for ids in by_class.values_mut() {
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            fold_of.insert(id.to_string(), next);
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { fold_of, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn doc(id: &str, label: &str) -> Document {
        Document {
            id: id.into(),
            title: String::new(),
            text: format!("text of {id}"),
            label: label.into(),
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_single_line() {
        let f = write_lines(&[r#"{"id":"1","title":"T","text":"body","label":"Flood"}"#]);
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.label_set(), ["Flood"]);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let f = write_lines(&[
            r#"{"id":"a","title":"","text":"x","label":"l"}"#,
            r#"{"id":"a","title":"","text":"y","label":"l"}"#,
        ]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[
            r#"{"id":"a","title":"","text":"x","label":"l"}"#,
            r#"{"id":"b","title":"","text":"y""#,
        ]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
        let f = write_lines(&[r#"{"id":"a","title":"","label":"l"}"#]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_lines(&[]);
        assert!(matches!(load_corpus(f.path()), Err(CorpusError::Empty)));
    }

    #[test]
    fn unknown_keys_are_tolerated() {
        let f = write_lines(&[r#"{"id":"a","title":"","text":"x","label":"l","date":"2020"}"#]);
        assert_eq!(load_corpus(f.path()).unwrap().len(), 1);
    }

    #[test]
    fn label_set_is_sorted() {
        let corpus = LabeledCorpus::new(vec![doc("1", "b"), doc("2", "a"), doc("3", "b")]).unwrap();
        assert_eq!(corpus.label_set(), ["a", "b"]);
        assert_eq!(corpus.label_index("b"), Some(1));
    }

    #[test]
    fn counts_labels() {
        let corpus = LabeledCorpus::new(vec![doc("1", "a"), doc("2", "a"), doc("3", "b")]).unwrap();
        let stats = class_stats(&corpus, 500);
        assert_eq!(stats.counts["a"], 2);
        assert_eq!(stats.counts["b"], 1);
        assert_eq!(stats.total(), 3);
        assert_eq!(stats.low_resource_threshold, 500);
    }

    #[test]
    fn low_resource_threshold_is_strict() {
        let stats = ClassStats {
            counts: [("x".to_string(), 499), ("y".to_string(), 500)].into(),
            low_resource_threshold: 500,
        };
        let low = low_resource_labels(&stats);
        assert!(low.contains("x"));
        assert!(!low.contains("y"));
        assert_eq!(stats.low_resource_documents(), 499);
    }

    #[test]
    fn title_composition() {
        assert_eq!(
            compose_title_text(
                "Covid Cost 4 Times More Jobs Than 2009 Financial Crisis: UN",
                "Unemployment in Taiwan surged…"
            ),
            "Covid Cost 4 Times More Jobs Than 2009 Financial Crisis: UN. Unemployment in Taiwan surged…"
        );
        assert_eq!(compose_title_text("", "Some text"), "Some text");
        assert_eq!(
            compose_title_text("Breaking news!", "Body"),
            "Breaking news! Body"
        );
        assert_eq!(compose_title_text("Done.", "Body"), "Done. Body");
        assert_eq!(compose_title_text("Why?", "Body"), "Why? Body");
    }

    fn corpus_with(counts: &[(&str, usize)]) -> LabeledCorpus {
        let mut docs = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                docs.push(doc(&format!("{label}-{i}"), label));
            }
        }
        LabeledCorpus::new(docs).unwrap()
    }

    fn fold_counts(corpus: &LabeledCorpus, folds: &FoldAssignment, label: &str) -> Vec<usize> {
        let mut counts = vec![0; folds.k];
        for d in corpus.documents().iter().filter(|d| d.label == label) {
            counts[folds.fold(&d.id).unwrap()] += 1;
        }
        counts
    }

    #[test]
    fn exact_stratification() {
        let corpus = corpus_with(&[("a", 10), ("b", 10)]);
        let folds = stratified_folds(&corpus, 5, 7).unwrap();
        assert_eq!(fold_counts(&corpus, &folds, "a"), vec![2; 5]);
        assert_eq!(fold_counts(&corpus, &folds, "b"), vec![2; 5]);
    }

    #[test]
    fn pigeonhole_fold_sizes() {
        let corpus = corpus_with(&[("a", 11)]);
        let folds = stratified_folds(&corpus, 5, 1).unwrap();
        let mut counts = fold_counts(&corpus, &folds, "a");
        counts.sort_unstable();
        assert_eq!(counts, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_are_deterministic() {
        let corpus = corpus_with(&[("a", 13), ("b", 6), ("c", 9)]);
        assert_eq!(
            stratified_folds(&corpus, 5, 42).unwrap(),
            stratified_folds(&corpus, 5, 42).unwrap()
        );
    }

    #[test]
    fn small_class_is_named() {
        let corpus = corpus_with(&[("a", 10), ("rare", 3)]);
        match stratified_folds(&corpus, 5, 0) {
            Err(CorpusError::ClassTooSmall { class, count, k }) => {
                assert_eq!((class.as_str(), count, k), ("rare", 3, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_doc() -> impl Strategy<Value = (String, String, String)> {
            (".{0,12}", "[^\\s].{0,30}", "[a-e]")
        }

        proptest! {
            #[test]
            fn low_resource_partition(counts in proptest::collection::btree_map("[a-z]{1,4}", 1usize..50, 1..10), threshold in 1usize..60) {
                let stats = ClassStats { counts: counts.clone(), low_resource_threshold: threshold };
                let low = low_resource_labels(&stats).len();
                let high = counts.values().filter(|&&c| c >= threshold).count();
                prop_assert_eq!(low + high, counts.len());
            }

            #[test]
            fn composed_text_ends_with_text(title in ".{0,20}", text in "[^\\s].{0,20}") {
                prop_assert!(compose_title_text(&title, &text).ends_with(&text));
            }

            #[test]
            fn stratification_bound(counts in proptest::collection::vec(5usize..40, 1..6), k in 2usize..6, seed in any::<u64>()) {
                let pairs: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, &n)| (format!("c{i}"), n)).collect();
                let refs: Vec<(&str, usize)> = pairs.iter().map(|(l, n)| (l.as_str(), *n)).collect();
                let corpus = corpus_with(&refs);
                let folds = stratified_folds(&corpus, k, seed).unwrap();
                prop_assert_eq!(folds.fold_of.len(), corpus.len());
                for (label, _) in &refs {
                    let c = fold_counts(&corpus, &folds, label);
                    prop_assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
                }
            }

            #[test]
            fn jsonl_round_trip(raw in proptest::collection::vec(arb_doc(), 1..8)) {
                let docs: Vec<Document> = raw.into_iter().enumerate().map(|(i, (title, text, label))| Document {
                    id: format!("d{i}"), title, text, label,
                }).collect();
                let f = tempfile::NamedTempFile::new().unwrap();
                write_corpus(f.path(), &docs).unwrap();
                let back = load_corpus(f.path()).unwrap();
                prop_assert_eq!(back.documents(), &docs[..]);
            }
        }
    }
}
