use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::augment::{augment_corpus, load_augmented, AugmentedExample, Summarizer, ToySummarizer};
use super::config::{Augmentation, Backend, ExperimentConfig, TitleMode};
use super::remote::RemoteClient;
use super::PipelineError;
use crate::corpus::{
    class_stats, compose_title_text, load_corpus, low_resource_labels, stratified_folds, Document,
    LabeledCorpus,
};
use crate::eval::{
    cross_validate, render_table, render_tsv, BoxError, Classifier, FoldReport, Provenance,
    TrainingExample,
};
use crate::svm::{train_ovr, LinearModel, TrainConfig};
use crate::vectorize::{fit, TfidfConfig, TfidfModel};

/// TF-IDF features followed by a one-vs-rest linear SVM.
#[derive(Debug, Clone)]
pub struct TextClassifier {
    pub tfidf: TfidfModel,
    pub svm: LinearModel,
}

impl Classifier for TextClassifier {
    fn predict(&self, text: &str) -> String {
        let x = self.tfidf.transform(text);
        self.svm
            .predict(&x)
            .expect("vectorizer and model dimensions agree")
            .to_owned()
    }

    fn predict_all(&self, texts: &[String]) -> Vec<String> {
        self.tfidf
            .transform_all(texts)
            .iter()
            .map(|x| {
                self.svm
                    .predict(x)
                    .expect("vectorizer and model dimensions agree")
                    .to_owned()
            })
            .collect()
    }
}

pub fn train_text_classifier(
    examples: &[TrainingExample],
    tfidf: &TfidfConfig,
    svm: &TrainConfig,
) -> Result<TextClassifier, PipelineError> {
    let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
    let labels: Vec<String> = examples.iter().map(|e| e.label.clone()).collect();
    let tfidf = fit(&texts, tfidf)?;
    let x = tfidf.transform_all(&texts);
    let svm = train_ovr(&x, &labels, svm)?;
    if !svm.converged {
        log::warn!("SVM stopped at the sweep limit before reaching tolerance");
    }
    Ok(TextClassifier { tfidf, svm })
}

/// Classifier input for an original document.
pub fn classifier_input(doc: &Document, mode: TitleMode) -> String {
    match mode {
        TitleMode::TitleText => compose_title_text(&doc.title, &doc.text),
        TitleMode::Text => doc.text.clone(),
    }
}

/// Classifier input for a summary: the source title is kept under T+D.
pub fn augmented_input(source_title: &str, summary: &str, mode: TitleMode) -> String {
    match mode {
        TitleMode::TitleText => compose_title_text(source_title, summary),
        TitleMode::Text => summary.to_owned(),
    }
}

/// Git-style object hash: SHA-256 over `blob <len>\0<content>`, hex.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(PipelineError::io(format!("reading {}", path.display())))?;
    Ok(content_hash(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub setup: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    /// Input path → content hash.
    pub inputs: BTreeMap<String, String>,
    pub low_resource_classes: Vec<String>,
    pub low_resource_documents: usize,
    pub augmented_examples: usize,
    pub distinctness_drops: usize,
    /// Phase → wall-clock seconds.
    pub timings: BTreeMap<String, f64>,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub setup: String,
    pub report: FoldReport,
    pub manifest: RunManifest,
}

/// Augmented training examples grouped by source document, so a training
/// split receives exactly the summaries of its own documents.
#[derive(Debug, Clone, Default)]
pub struct AugmentationIndex {
    by_source: HashMap<String, Vec<TrainingExample>>,
}

impl AugmentationIndex {
    pub fn new(corpus: &LabeledCorpus, examples: &[AugmentedExample], mode: TitleMode) -> Self {
        let mut by_source: HashMap<String, Vec<TrainingExample>> = HashMap::new();
        for ex in examples {
            let title = corpus
                .get(&ex.source_id)
                .map(|d| d.title.as_str())
                .unwrap_or_default();
            by_source
                .entry(ex.source_id.clone())
                .or_default()
                .push(TrainingExample {
                    text: augmented_input(title, &ex.summary, mode),
                    label: ex.label.clone(),
                    provenance: Provenance::Augmented {
                        source_id: ex.source_id.clone(),
                        variant: ex.variant,
                    },
                });
        }
        Self { by_source }
    }

    /// Summaries of the given training documents, in split order.
    pub fn for_split(&self, train: &[&Document]) -> Vec<TrainingExample> {
        train
            .iter()
            .filter_map(|d| self.by_source.get(&d.id))
            .flatten()
            .cloned()
            .collect()
    }
}

/// The summarization backend named by `cfg.backend`.
pub fn summarizer_for(cfg: &ExperimentConfig) -> Result<Box<dyn Summarizer>, PipelineError> {
    Ok(match &cfg.backend {
        Backend::Toy => Box::new(ToySummarizer { dim: cfg.toy_dim }),
        Backend::Remote(url) => {
            Box::new(RemoteClient::connect(url).map_err(PipelineError::Server)?)
        }
    })
}

/// Loads `cfg.augmented_path` when it exists, otherwise generates the
/// augmentation (written to `augmented_path`, or `output_dir/augmented.jsonl`).
fn obtain_augmentation(
    cfg: &ExperimentConfig,
    corpus: &LabeledCorpus,
    low: &std::collections::BTreeSet<String>,
) -> Result<(Vec<AugmentedExample>, usize, PathBuf), PipelineError> {
    if let Some(path) = cfg.augmented_path.as_ref().filter(|p| p.exists()) {
        let examples = load_augmented(path)?;
        for ex in &examples {
            match corpus.get(&ex.source_id) {
                Some(doc) if doc.label == ex.label => {}
                Some(doc) => {
                    return Err(PipelineError::Config(format!(
                        "{}: summary of `{}` labelled `{}`, source is `{}`",
                        path.display(),
                        ex.source_id,
                        ex.label,
                        doc.label
                    )))
                }
                None => {
                    return Err(PipelineError::Config(format!(
                        "{}: unknown source document `{}`",
                        path.display(),
                        ex.source_id
                    )))
                }
            }
        }
        return Ok((examples, 0, path.clone()));
    }
    let sink = cfg
        .augmented_path
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("augmented.jsonl"));
    let summarizer = summarizer_for(cfg)?;
    let outcome = augment_corpus(corpus, low, cfg, summarizer.as_ref(), Some(&sink))?;
    Ok((outcome.examples, outcome.distinctness_drops, sink))
}

/// Runs one cross-validated setup and writes `report.{json,tsv,txt}`,
/// `manifest.json` and `config.txt` into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, PipelineError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut timings = BTreeMap::new();
    fs::create_dir_all(&cfg.output_dir).map_err(PipelineError::io(format!(
        "creating {}",
        cfg.output_dir.display()
    )))?;

    let corpus = load_corpus(&cfg.train_path)?;
    let stats = class_stats(&corpus, cfg.low_resource_threshold);
    let low = low_resource_labels(&stats);
    let folds = stratified_folds(&corpus, cfg.folds, cfg.seed)?;
    let mut inputs = BTreeMap::new();
    inputs.insert(
        cfg.train_path.display().to_string(),
        hash_file(&cfg.train_path)?,
    );

    let t = Instant::now();
    let (augmented, drops) = if cfg.augmentation == Augmentation::None {
        (Vec::new(), 0)
    } else {
        let (examples, drops, path) = obtain_augmentation(cfg, &corpus, &low)?;
        inputs.insert(path.display().to_string(), hash_file(&path)?);
        (examples, drops)
    };
    timings.insert("augmentation".to_owned(), t.elapsed().as_secs_f64());

    let index = AugmentationIndex::new(&corpus, &augmented, cfg.title_mode);
    let augmenter = |train: &[&Document]| -> Result<Vec<TrainingExample>, BoxError> {
        Ok(index.for_split(train))
    };
    let (tfidf_cfg, train_cfg) = (cfg.tfidf_config(), cfg.train_config());
    let trainer = |examples: &[TrainingExample]| -> Result<TextClassifier, BoxError> {
        Ok(train_text_classifier(examples, &tfidf_cfg, &train_cfg)?)
    };

    let t = Instant::now();
    let report = cross_validate(
        &corpus,
        &folds,
        |d: &Document| classifier_input(d, cfg.title_mode),
        trainer,
        (!augmented.is_empty()).then_some(augmenter),
    )?;
    timings.insert("cross_validation".to_owned(), t.elapsed().as_secs_f64());
    timings.insert("total".to_owned(), started.elapsed().as_secs_f64());

    let setup = cfg.setup_label();
    let manifest = RunManifest {
        setup: setup.clone(),
        config: crate::pipeline::ExperimentConfig::KEYS
            .iter()
            .filter_map(|k| cfg.get(k).map(|v| (k.to_string(), v)))
            .collect(),
        seed: cfg.seed,
        inputs,
        low_resource_classes: low.iter().cloned().collect(),
        low_resource_documents: stats.low_resource_documents(),
        augmented_examples: augmented.len(),
        distinctness_drops: drops,
        timings,
        crate_version: env!("CARGO_PKG_VERSION").to_owned(),
    };
    let result = ExperimentResult {
        setup: setup.clone(),
        report,
        manifest,
    };
    write_run(&cfg.output_dir, cfg, &result)?;
    Ok(result)
}

fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
) -> Result<(), PipelineError> {
    let rows = [(result.setup.clone(), result.report.clone())];
    let files = [
        (
            "report.json",
            serde_json::to_string_pretty(result).expect("results serialize"),
        ),
        ("report.tsv", render_tsv(&rows)),
        ("report.txt", render_table("SVM macro-F1", &rows)),
        (
            "manifest.json",
            serde_json::to_string_pretty(&result.manifest).expect("manifests serialize"),
        ),
        ("config.txt", cfg.to_kv()),
    ];
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content)
            .map_err(PipelineError::io(format!("writing {}", path.display())))?;
    }
    Ok(())
}

/// Collects the `report.json` of several run directories into one table
/// (rows in the given order) and its TSV form.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<(String, String), PipelineError> {
    let mut rows = Vec::with_capacity(dirs.len());
    let mut seen = HashSet::new();
    for dir in dirs {
        let path = dir.join("report.json");
        let raw = fs::read_to_string(&path)
            .map_err(PipelineError::io(format!("reading {}", path.display())))?;
        let result: ExperimentResult = serde_json::from_str(&raw)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut name = result.setup.clone();
        if !seen.insert(name.clone()) {
            name = format!("{name} [{}]", dir.display());
        }
        rows.push((name, result.report));
    }
    Ok((render_table("SVM macro-F1", &rows), render_tsv(&rows)))
}
