//! TF-IDF n-gram featurization.
//!
//! Semantics:
//! * text is lowercased, tokens are maximal runs of word characters of
//!   length ≥ 2, and n-grams join tokens with a single space;
//! * `df(t)` counts documents containing `t`; a term is kept when
//!   `df(t) ≥ min_df` and `df(t) ≤ max_df · N`;
//! * `idf(t) = ln((1 + N) / (1 + df(t))) + 1`;
//! * a document vector holds raw counts times idf, L2-normalized;
//! * the vocabulary is indexed in lexicographic order of n-gram strings.
//!
//! No accent stripping, stop words or sublinear tf.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TFIDF_FORMAT_VERSION: u32 = 1;

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\w{2,}").unwrap());

/// Scale used to compare `df / N ≤ max_df` in integers.
const MAX_DF_SCALE: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum VectorizeError {
    #[error("no documents to fit")]
    NoDocuments,
    #[error(
        "vocabulary is empty after document-frequency filtering; lower min_df or raise max_df"
    )]
    EmptyVocabulary,
    #[error("invalid vectorizer config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub ngram_range: (usize, usize),
    /// Absolute minimum document count.
    pub min_df: usize,
    /// Maximum document proportion.
    pub max_df: f64,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self {
            ngram_range: (1, 3),
            min_df: 3,
            max_df: 0.9,
        }
    }
}

impl TfidfConfig {
    fn validate(&self) -> Result<(), VectorizeError> {
        let (lo, hi) = self.ngram_range;
        if lo < 1 || lo > hi {
            return Err(VectorizeError::Config(
                "ngram range must satisfy 1 ≤ lo ≤ hi".into(),
            ));
        }
        if !(self.max_df > 0.0 && self.max_df <= 1.0) {
            return Err(VectorizeError::Config("max_df must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// `df ≤ max_df · n` with `max_df` rounded to six decimals.
    fn within_max_df(&self, df: usize, n: usize) -> bool {
        let scaled = (self.max_df * MAX_DF_SCALE as f64).round() as u128;
        df as u128 * MAX_DF_SCALE <= scaled * n as u128
    }
}

/// A sparse, L2-normalized feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    /// Builds a vector from unsorted `(index, value)` pairs, dropping zeros.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        pairs.retain(|p| p.1 != 0.0);
        let (indices, values) = pairs.into_iter().unzip();
        Self {
            indices,
            values,
            dim,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .map(|&i| i as usize)
            .zip(self.values.iter().copied())
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    /// Dot product with a dense vector of at least `dim` entries.
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| dense[i] * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

pub fn tokenize_text(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    TOKEN_RE
        .find_iter(&lower)
        .map(|m| m.as_str().to_owned())
        .collect()
}

/// All contiguous n-grams for `n` in `lo..=hi`, with repetition.
pub fn extract_ngrams(tokens: &[String], (lo, hi): (usize, usize)) -> Vec<String> {
    let mut out = Vec::new();
    for n in lo..=hi {
        if n == 0 || n > tokens.len() {
            continue;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub config: TfidfConfig,
    pub vocabulary: BTreeMap<String, u32>,
    pub idf: Vec<f64>,
    pub n_docs_fitted: usize,
}

#[derive(Serialize, Deserialize)]
struct TfidfFile {
    format_version: u32,
    config: TfidfConfig,
    n_docs_fitted: usize,
    /// Terms in feature-index order.
    terms: Vec<String>,
    idf: Vec<f64>,
}

pub fn fit<S: AsRef<str>>(
    documents: &[S],
    config: &TfidfConfig,
) -> Result<TfidfModel, VectorizeError> {
    config.validate()?;
    if documents.is_empty() {
        return Err(VectorizeError::NoDocuments);
    }
    let n = documents.len();
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in documents {
        let grams = extract_ngrams(&tokenize_text(doc.as_ref()), config.ngram_range);
        let distinct: HashSet<String> = grams.into_iter().collect();
        for g in distinct {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let kept: BTreeMap<String, usize> = df
        .into_iter()
        .filter(|(_, d)| *d >= config.min_df && config.within_max_df(*d, n))
        .collect();
    if kept.is_empty() {
        return Err(VectorizeError::EmptyVocabulary);
    }
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(kept.len());
    for (i, (term, d)) in kept.into_iter().enumerate() {
        idf.push(((1 + n) as f64 / (1 + d) as f64).ln() + 1.0);
        vocabulary.insert(term, i as u32);
    }
    Ok(TfidfModel {
        config: config.clone(),
        vocabulary,
        idf,
        n_docs_fitted: n,
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn transform(&self, document: &str) -> SparseVector {
        let grams = extract_ngrams(&tokenize_text(document), self.config.ngram_range);
        let mut tf: HashMap<u32, usize> = HashMap::new();
        for g in &grams {
            if let Some(&idx) = self.vocabulary.get(g) {
                *tf.entry(idx).or_insert(0) += 1;
            }
        }
        let pairs: Vec<(u32, f64)> = tf
            .into_iter()
            .map(|(idx, count)| (idx, count as f64 * self.idf[idx as usize]))
            .collect();
        let mut v = SparseVector::from_pairs(self.dim(), pairs);
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn transform_all<S: AsRef<str> + Sync>(&self, documents: &[S]) -> Vec<SparseVector> {
        use rayon::prelude::*;
        documents
            .par_iter()
            .map(|d| self.transform(d.as_ref()))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VectorizeError> {
        let mut terms = vec![String::new(); self.dim()];
        for (t, &i) in &self.vocabulary {
            terms[i as usize] = t.clone();
        }
        let file = TfidfFile {
            format_version: TFIDF_FORMAT_VERSION,
            config: self.config.clone(),
            n_docs_fitted: self.n_docs_fitted,
            terms,
            idf: self.idf.clone(),
        };
        let json =
            serde_json::to_string(&file).map_err(|e| VectorizeError::Format(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VectorizeError> {
        let raw = fs::read_to_string(path)?;
        let file: TfidfFile =
            serde_json::from_str(&raw).map_err(|e| VectorizeError::Format(e.to_string()))?;
        if file.format_version != TFIDF_FORMAT_VERSION {
            return Err(VectorizeError::Format(format!(
                "unsupported format version {}",
                file.format_version
            )));
        }
        if file.terms.len() != file.idf.len() {
            return Err(VectorizeError::Format(
                "terms and idf lengths differ".into(),
            ));
        }
        let vocabulary = file
            .terms
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i as u32))
            .collect();
        Ok(Self {
            config: file.config,
            vocabulary,
            idf: file.idf,
            n_docs_fitted: file.n_docs_fitted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize_text("Covid Cost 4 Times"),
            s(&["covid", "cost", "times"])
        );
        assert!(tokenize_text("").is_empty());
        assert_eq!(tokenize_text("U.N. aid"), s(&["aid"]));
        assert_eq!(
            tokenize_text("Über-Straße 2020"),
            s(&["über", "straße", "2020"])
        );
    }

    #[test]
    fn ngram_enumeration() {
        let mut got = extract_ngrams(&s(&["a", "b", "c"]), (1, 3));
        got.sort();
        assert_eq!(got, s(&["a", "a b", "a b c", "b", "b c", "c"]));
        assert_eq!(extract_ngrams(&s(&["a"]), (1, 3)), s(&["a"]));
        assert_eq!(extract_ngrams(&s(&["a", "b"]), (2, 2)), s(&["a b"]));
    }

    fn cfg(min_df: usize, max_df: f64) -> TfidfConfig {
        TfidfConfig {
            ngram_range: (1, 1),
            min_df,
            max_df,
        }
    }

    #[test]
    fn idf_values() {
        let docs = ["aa bb", "aa cc", "aa bb"];
        let m = fit(&docs, &cfg(1, 1.0)).unwrap();
        assert_eq!(m.idf[m.vocabulary["aa"] as usize], 1.0);
        // N = 10, df = 3.
        let mut docs = vec!["xx yy"; 3];
        docs.extend(vec!["yy zz"; 7]);
        let m = fit(&docs, &cfg(1, 1.0)).unwrap();
        let idf = m.idf[m.vocabulary["xx"] as usize];
        assert!((idf - ((11.0f64 / 4.0).ln() + 1.0)).abs() < 1e-12);
        assert!((idf - 2.0116).abs() < 1e-4);
    }

    #[test]
    fn document_frequency_filters() {
        let docs = ["aa bb", "aa cc", "aa bb cc", "bb dd"];
        let m = fit(&docs, &cfg(3, 1.0)).unwrap();
        assert!(m.vocabulary.contains_key("aa") && m.vocabulary.contains_key("bb"));
        assert!(!m.vocabulary.contains_key("cc"));
        // aa is in 3 of 4 documents: 3 ≤ 0.75·4 is kept, 3 > 0.7·4 is not.
        assert!(fit(&docs, &cfg(1, 0.75))
            .unwrap()
            .vocabulary
            .contains_key("aa"));
        assert!(!fit(&docs, &cfg(1, 0.7))
            .unwrap()
            .vocabulary
            .contains_key("aa"));
        assert!(matches!(
            fit(&docs, &cfg(5, 1.0)),
            Err(VectorizeError::EmptyVocabulary)
        ));
    }

    #[test]
    fn max_df_boundary_is_exact() {
        let c = cfg(1, 0.9);
        assert!(c.within_max_df(9, 10));
        assert!(!c.within_max_df(10, 10));
        assert!(c.within_max_df(18, 20));
        assert!(!c.within_max_df(19, 20));
    }

    #[test]
    fn transform_basics() {
        let m = fit(&["aa bb", "aa cc"], &cfg(1, 1.0)).unwrap();
        assert!(m.transform("zz qq").is_empty());
        let v = m.transform("cc");
        assert_eq!(v.nnz(), 1);
        assert_eq!(v.values[0], 1.0);
        assert!((m.transform("aa bb bb cc").norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocabulary_is_order_independent() {
        let a = fit(&["aa bb", "cc dd", "bb cc"], &cfg(1, 1.0)).unwrap();
        let b = fit(&["bb cc", "aa bb", "cc dd"], &cfg(1, 1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_and_load() {
        let m = fit(
            &["aa bb cc", "aa bb", "bb cc dd"],
            &TfidfConfig {
                min_df: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        assert_eq!(TfidfModel::load(f.path()).unwrap(), m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rows_are_unit_or_empty(docs in proptest::collection::vec("[a-e]{2}( [a-e]{2}){0,8}", 1..8)) {
                let m = fit(&docs, &TfidfConfig { min_df: 1, max_df: 1.0, ..Default::default() }).unwrap();
                for d in &docs {
                    let v = m.transform(d);
                    prop_assert!(v.is_empty() || (v.norm() - 1.0).abs() < 1e-9);
                    prop_assert!(v.indices.windows(2).all(|w| w[0] < w[1]));
                    prop_assert!(v.values.iter().all(|x| *x > 0.0));
                }
                // Every corpus n-gram is in the vocabulary with min_df = 1.
                for d in &docs {
                    for g in extract_ngrams(&tokenize_text(d), (1, 3)) {
                        prop_assert!(m.vocabulary.contains_key(&g));
                    }
                }
            }

            #[test]
            fn dropping_a_document_never_raises_df(docs in proptest::collection::vec("[a-d]{2}( [a-d]{2}){0,6}", 2..8)) {
                let c = TfidfConfig { min_df: 1, max_df: 1.0, ngram_range: (1, 2) };
                let full = fit(&docs, &c).unwrap();
                let fewer = match fit(&docs[1..], &c) { Ok(m) => m, Err(_) => return Ok(()) };
                // idf is decreasing in df at fixed N, so compare recovered df.
                let df = |m: &TfidfModel, t: &str| m.vocabulary.get(t).map(|&i| {
                    let n = m.n_docs_fitted as f64;
                    ((1.0 + n) / (m.idf[i as usize] - 1.0).exp() - 1.0).round() as usize
                }).unwrap_or(0);
                for t in fewer.vocabulary.keys() {
                    prop_assert!(df(&fewer, t) <= df(&full, t));
                }
            }
        }
    }
}
