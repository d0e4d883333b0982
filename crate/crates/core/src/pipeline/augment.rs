use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, TitleMode};
use super::remote::RemoteClient;
use super::PipelineError;
use crate::corpus::{compose_title_text, Document, LabeledCorpus};
use crate::decode::{generate_n_distinct, DecodeConfig, DecodeError};
use crate::lm::{build_toy_lm, LmError};

const RETRY_ATTEMPTS: u32 = 3;
const RETRY_BASE_DELAY: Duration = Duration::from_millis(100);

/// One generated summary used as a new training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub source_id: String,
    pub method: String,
    pub variant: usize,
    pub summary: String,
    pub label: String,
}

/// Produces up to `n` distinct summaries of a text.
pub trait Summarizer: Sync {
    /// Identifies the underlying model in cache keys.
    fn model_id(&self) -> String;

    fn summarize(
        &self,
        doc_id: &str,
        text: &str,
        cfg: &DecodeConfig,
        n: usize,
    ) -> Result<Vec<String>, DecodeError>;
}

/// In-process backend: a bigram model fitted to the document being
/// summarized, so its outputs recombine that document's own word sequences.
#[derive(Debug, Clone)]
pub struct ToySummarizer {
    pub dim: usize,
}

impl Summarizer for ToySummarizer {
    fn model_id(&self) -> String {
        format!("toy-bigram-d{}", self.dim)
    }

    fn summarize(
        &self,
        doc_id: &str,
        text: &str,
        cfg: &DecodeConfig,
        n: usize,
    ) -> Result<Vec<String>, DecodeError> {
        let lm = build_toy_lm(&[text], self.dim, stable_hash(doc_id))?;
        let hyps = generate_n_distinct(&lm, text, cfg, n)?;
        Ok(hyps
            .iter()
            .map(|h| lm.vocab().detokenize(&h.tokens))
            .collect())
    }
}

impl Summarizer for RemoteClient {
    fn model_id(&self) -> String {
        self.model_id().to_owned()
    }

    fn summarize(
        &self,
        _doc_id: &str,
        text: &str,
        cfg: &DecodeConfig,
        n: usize,
    ) -> Result<Vec<String>, DecodeError> {
        let session = self.open_session(text)?;
        if session.truncated() {
            log::info!(
                "source truncated by the server to {} tokens",
                session.source_len()
            );
        }
        let hyps = generate_n_distinct(&session, text, cfg, n)?;
        let mut out = Vec::with_capacity(hyps.len());
        for h in &hyps {
            out.push(self.detokenize(&h.tokens)?);
        }
        Ok(out)
    }
}

fn stable_hash(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Per-document sampling seed: the experiment seed mixed with a stable hash
/// of the document id. Attempt indices are mixed in by the decoder.
pub fn document_seed(experiment_seed: u64, doc_id: &str) -> u64 {
    experiment_seed ^ stable_hash(doc_id)
}

/// On-disk summary cache keyed by document, method, decode parameters and
/// backend model.
#[derive(Debug, Clone)]
pub struct SummaryCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    summaries: Vec<String>,
}

impl SummaryCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(PipelineError::io(format!("creating {}", dir.display())))?;
        Ok(Self { dir })
    }

    fn key(doc_id: &str, input: &str, cfg: &DecodeConfig, n: usize, model_id: &str) -> String {
        let params = serde_json::to_string(cfg).expect("decode config serializes");
        format!(
            "{doc_id}\u{1f}{params}\u{1f}{n}\u{1f}{model_id}\u{1f}{:016x}",
            stable_hash(input)
        )
    }

    fn path(&self, key: &str) -> PathBuf {
        let digest = Sha256::digest(key.as_bytes());
        let name: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{name}.json"))
    }

    fn get(&self, key: &str) -> Option<Vec<String>> {
        let raw = fs::read_to_string(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&raw).ok()?;
        (entry.key == key).then_some(entry.summaries)
    }

    fn put(&self, key: &str, summaries: &[String]) {
        let entry = CacheEntry {
            key: key.to_owned(),
            summaries: summaries.to_vec(),
        };
        let json = serde_json::to_string(&entry).expect("cache entry serializes");
        if let Err(e) = fs::write(self.path(key), json) {
            log::warn!("could not write summary cache entry: {e}");
        }
    }
}

/// Result of an augmentation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub examples: Vec<AugmentedExample>,
    /// Number of low-resource documents that were summarized.
    pub source_documents: usize,
    /// Requested summaries that could not be produced as distinct outputs.
    pub distinctness_drops: usize,
}

fn summarize_with_retry(
    summarizer: &dyn Summarizer,
    doc_id: &str,
    input: &str,
    cfg: &DecodeConfig,
    n: usize,
) -> Result<Vec<String>, DecodeError> {
    let mut attempt = 0;
    loop {
        match summarizer.summarize(doc_id, input, cfg, n) {
            Err(DecodeError::Model(e)) if e.is_transient() && attempt + 1 < RETRY_ATTEMPTS => {
                let delay = RETRY_BASE_DELAY * 2u32.pow(attempt);
                log::warn!("{doc_id}: {e}; retrying in {delay:?}");
                thread::sleep(delay);
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Summarizes every document of a low-resource class.
///
/// Summaries inherit the source label. Distinct summaries are kept per
/// document (compared as strings); shortfalls are counted and logged. When
/// `output` is given the examples are written there as JSON Lines, including
/// the partial results of a run that hit backend failures, which then
/// returns [`PipelineError::Backend`] listing the failed documents.
pub fn augment_corpus(
    corpus: &LabeledCorpus,
    low_resource: &BTreeSet<String>,
    cfg: &ExperimentConfig,
    summarizer: &dyn Summarizer,
    output: Option<&Path>,
) -> Result<AugmentOutcome, PipelineError> {
    cfg.validate()?;
    let base = cfg
        .decode_config()
        .ok_or_else(|| PipelineError::Config("augmentation is `none`".into()))?;
    let method = cfg.augmentation.tag();
    let n = cfg.summaries_per_doc;
    let cache = cfg.cache_dir.as_ref().map(SummaryCache::new).transpose()?;
    let model_id = summarizer.model_id();
    let sources: Vec<&Document> = corpus
        .documents()
        .iter()
        .filter(|d| low_resource.contains(&d.label))
        .collect();

    let work = || {
        sources
            .par_iter()
            .map(|doc| {
                let input = match cfg.title_mode {
                    TitleMode::TitleText => compose_title_text(&doc.title, &doc.text),
                    TitleMode::Text => doc.text.clone(),
                };
                let dcfg = DecodeConfig {
                    seed: document_seed(cfg.seed, &doc.id),
                    ..base.clone()
                };
                let key = SummaryCache::key(&doc.id, &input, &dcfg, n, &model_id);
                if let Some(hit) = cache.as_ref().and_then(|c| c.get(&key)) {
                    return Ok(hit);
                }
                let summaries = summarize_with_retry(summarizer, &doc.id, &input, &dcfg, n)?;
                if let Some(c) = &cache {
                    c.put(&key, &summaries);
                }
                Ok(summaries)
            })
            .collect::<Vec<Result<Vec<String>, DecodeError>>>()
    };
    let results = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?
            .install(work)
    } else {
        work()
    };

    let mut examples = Vec::new();
    let mut drops = 0;
    let mut failed = Vec::new();
    let mut first_error = None;
    for (doc, result) in sources.iter().zip(results) {
        match result {
            Ok(summaries) => {
                let mut seen = HashSet::new();
                let distinct: Vec<String> = summaries
                    .into_iter()
                    .filter(|s| !s.trim().is_empty() && seen.insert(s.clone()))
                    .collect();
                if distinct.len() < n {
                    log::info!("{}: {} of {n} distinct summaries", doc.id, distinct.len());
                    drops += n - distinct.len();
                }
                examples.extend(distinct.into_iter().enumerate().map(|(variant, summary)| {
                    AugmentedExample {
                        source_id: doc.id.clone(),
                        method: method.to_owned(),
                        variant,
                        summary,
                        label: doc.label.clone(),
                    }
                }));
            }
            Err(DecodeError::Model(e)) if e.is_transient() => {
                failed.push(doc.id.clone());
                first_error.get_or_insert_with(|| e.to_string());
            }
            Err(DecodeError::Model(LmError::Protocol(m))) => {
                return Err(PipelineError::Server(LmError::Protocol(m)));
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(path) = output {
        write_augmented(path, &examples)?;
    }
    if !failed.is_empty() {
        return Err(PipelineError::Backend {
            failed,
            message: first_error.unwrap_or_default(),
        });
    }
    Ok(AugmentOutcome {
        examples,
        source_documents: sources.len(),
        distinctness_drops: drops,
    })
}

pub fn write_augmented(path: &Path, examples: &[AugmentedExample]) -> Result<(), PipelineError> {
    let ctx = || format!("writing {}", path.display());
    let mut out = BufWriter::new(File::create(path).map_err(PipelineError::io(ctx()))?);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("examples serialize");
        writeln!(out, "{line}").map_err(PipelineError::io(ctx()))?;
    }
    out.flush().map_err(PipelineError::io(ctx()))
}

pub fn load_augmented(path: &Path) -> Result<Vec<AugmentedExample>, PipelineError> {
    let ctx = || format!("reading {}", path.display());
    let reader = BufReader::new(File::open(path).map_err(PipelineError::io(ctx()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(PipelineError::io(ctx()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            PipelineError::Config(format!("{}: line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::class_stats;
    use crate::corpus::low_resource_labels;
    use crate::pipeline::Augmentation;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn corpus() -> LabeledCorpus {
        let mut docs = Vec::new();
        for i in 0..6 {
            docs.push(Document {
                id: format!("big{i}"),
                title: "Big news".into(),
                text: format!("the market rallied on day {i} as stocks rose"),
                label: "Economy".into(),
            });
        }
        for i in 0..2 {
            docs.push(Document {
                id: format!("small{i}"),
                title: "Quake".into(),
                text: format!(
                    "a strong earthquake struck the coast {i} and buildings fell while people fled"
                ),
                label: "Earthquake".into(),
            });
        }
        LabeledCorpus::new(docs).unwrap()
    }

    fn cfg(aug: Augmentation) -> ExperimentConfig {
        ExperimentConfig {
            augmentation: aug,
            low_resource_threshold: 3,
            max_len: 12,
            min_len: 2,
            ..Default::default()
        }
    }

    #[test]
    fn summaries_keep_source_labels() {
        let corpus = corpus();
        let cfg = cfg(Augmentation::TopP);
        let low = low_resource_labels(&class_stats(&corpus, cfg.low_resource_threshold));
        let out = augment_corpus(&corpus, &low, &cfg, &ToySummarizer { dim: 16 }, None).unwrap();
        assert_eq!(out.source_documents, 2);
        assert!(out.examples.len() <= 6);
        assert_eq!(out.examples.len() + out.distinctness_drops, 6);
        for ex in &out.examples {
            assert_eq!(ex.label, "Earthquake");
            assert!(ex.source_id.starts_with("small"));
            assert_eq!(ex.method, "top_p");
        }
    }

    #[test]
    fn no_low_resource_classes_means_no_work() {
        let corpus = corpus();
        let cfg = cfg(Augmentation::Contrastive);
        let out = augment_corpus(
            &corpus,
            &BTreeSet::new(),
            &cfg,
            &ToySummarizer { dim: 16 },
            None,
        )
        .unwrap();
        assert!(out.examples.is_empty());
    }

    #[test]
    fn output_is_reproducible() {
        let corpus = corpus();
        let cfg = cfg(Augmentation::TopK);
        let low = low_resource_labels(&class_stats(&corpus, 3));
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        augment_corpus(&corpus, &low, &cfg, &ToySummarizer { dim: 16 }, Some(&a)).unwrap();
        augment_corpus(&corpus, &low, &cfg, &ToySummarizer { dim: 16 }, Some(&b)).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            load_augmented(&a).unwrap().len(),
            load_augmented(&b).unwrap().len()
        );
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
        always_fail: Option<&'static str>,
    }

    impl Summarizer for Flaky {
        fn model_id(&self) -> String {
            "flaky".into()
        }

        fn summarize(
            &self,
            doc_id: &str,
            _: &str,
            _: &DecodeConfig,
            n: usize,
        ) -> Result<Vec<String>, DecodeError> {
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            if Some(doc_id) == self.always_fail || call < self.fail_first {
                return Err(LmError::Backend("connection reset".into()).into());
            }
            Ok((0..n).map(|i| format!("{doc_id} summary {i}")).collect())
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let corpus = corpus();
        let mut cfg = cfg(Augmentation::Beam3);
        cfg.workers = 1;
        let low = low_resource_labels(&class_stats(&corpus, 3));
        let flaky = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 2,
            always_fail: None,
        };
        let out = augment_corpus(&corpus, &low, &cfg, &flaky, None).unwrap();
        assert_eq!(out.examples.len(), 6);
    }

    #[test]
    fn persistent_failures_persist_partial_results() {
        let corpus = corpus();
        let cfg = cfg(Augmentation::Beam3);
        let low = low_resource_labels(&class_stats(&corpus, 3));
        let flaky = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 0,
            always_fail: Some("small1"),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.jsonl");
        let err = augment_corpus(&corpus, &low, &cfg, &flaky, Some(&path)).unwrap_err();
        match &err {
            PipelineError::Backend { failed, .. } => assert_eq!(failed, &["small1".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.is_backend_failure());
        let partial = load_augmented(&path).unwrap();
        assert_eq!(partial.len(), 3);
        assert!(partial.iter().all(|e| e.source_id == "small0"));
    }

    #[test]
    fn cache_avoids_regeneration() {
        let corpus = corpus();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg(Augmentation::Beam3);
        cfg.cache_dir = Some(dir.path().to_path_buf());
        let low = low_resource_labels(&class_stats(&corpus, 3));
        let flaky = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 0,
            always_fail: None,
        };
        let first = augment_corpus(&corpus, &low, &cfg, &flaky, None).unwrap();
        let second = augment_corpus(&corpus, &low, &cfg, &flaky, None).unwrap();
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);
        assert_eq!(first, second);
    }
}
