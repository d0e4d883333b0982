//! Orchestration: configuration, summarization-based augmentation, the
//! model-server client, experiment execution and corpus ingestion.

mod augment;
mod config;
mod experiment;
mod ingest;
pub mod remote;

use thiserror::Error;

pub use augment::{
    augment_corpus, document_seed, load_augmented, write_augmented, AugmentOutcome,
    AugmentedExample, Summarizer, SummaryCache, ToySummarizer,
};
pub use config::{Augmentation, Backend, ExperimentConfig, TitleMode};
pub use experiment::{
    augmented_input, classifier_input, compare_runs, content_hash, run_experiment, summarizer_for,
    train_text_classifier, AugmentationIndex, ExperimentResult, RunManifest, TextClassifier,
};
pub use ingest::{ingest_native, NativeFormatError};

use crate::corpus::CorpusError;
use crate::decode::DecodeError;
use crate::eval::EvalError;
use crate::lm::LmError;
use crate::svm::SvmError;
use crate::vectorize::VectorizeError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ingest(#[from] NativeFormatError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend failure for {} document(s) [{}]: {message}", failed.len(), failed.join(", "))]
    Backend {
        failed: Vec<String>,
        message: String,
    },
    #[error("model server: {0}")]
    Server(LmError),
}

impl PipelineError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| PipelineError::Io { context, source }
    }

    /// Whether the error stems from the summarization backend.
    pub fn is_backend_failure(&self) -> bool {
        match self {
            PipelineError::Backend { .. } | PipelineError::Server(_) => true,
            PipelineError::Decode(DecodeError::Model(e)) => e.is_transient(),
            _ => false,
        }
    }
}
