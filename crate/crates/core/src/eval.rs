//! Macro-F1 scoring, stratified cross-validation and report tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, FoldAssignment, LabeledCorpus};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {0} labels but predictions have {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot score an empty prediction list")]
    Empty,
    #[error("fold assignment does not cover document `{0}`")]
    Uncovered(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: BoxError,
    },
    #[error("fold {fold}: augmented example from `{source_id}` is not part of the training split")]
    Leakage { fold: usize, source_id: String },
}

/// Unweighted mean of per-class F1 over the classes present in `gold`.
pub fn macro_f1<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64, EvalError> {
    Ok(per_class_f1(gold, pred)?.values().sum::<f64>() / class_count(gold) as f64)
}

fn class_count<S: AsRef<str>>(gold: &[S]) -> usize {
    gold.iter().map(AsRef::as_ref).collect::<HashSet<_>>().len()
}

/// F1 for each class present in `gold`.
pub fn per_class_f1<S: AsRef<str>>(
    gold: &[S],
    pred: &[S],
) -> Result<BTreeMap<String, f64>, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred.len()));
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let classes: BTreeSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    let mut out = BTreeMap::new();
    for class in classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(pred) {
            match (g.as_ref() == class, p.as_ref() == class) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let f1 = if tp == 0 {
            0.0
        } else {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / (tp + fn_) as f64;
            2.0 * precision * recall / (precision + recall)
        };
        out.insert(class.to_owned(), f1);
    }
    Ok(out)
}

/// Where a training example came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original(String),
    Augmented { source_id: String, variant: usize },
}

impl Provenance {
    pub fn source_id(&self) -> &str {
        match self {
            Provenance::Original(id) => id,
            Provenance::Augmented { source_id, .. } => source_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub text: String,
    pub label: String,
    pub provenance: Provenance,
}

/// A fitted text classifier.
pub trait Classifier {
    fn predict(&self, text: &str) -> String;

    fn predict_all(&self, texts: &[String]) -> Vec<String> {
        texts.iter().map(|t| self.predict(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub per_fold_f1: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    /// Mean F1 per class over the folds where the class occurs in gold.
    pub per_class_f1: BTreeMap<String, f64>,
}

impl FoldReport {
    pub fn from_folds(per_fold_f1: Vec<f64>, per_class: &[BTreeMap<String, f64>]) -> Self {
        let n = per_fold_f1.len() as f64;
        let mean = per_fold_f1.iter().sum::<f64>() / n;
        let std = (per_fold_f1.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for fold in per_class {
            for (class, f1) in fold {
                let e = sums.entry(class.clone()).or_insert((0.0, 0));
                e.0 += f1;
                e.1 += 1;
            }
        }
        let per_class_f1 = sums
            .into_iter()
            .map(|(c, (s, k))| (c, s / k as f64))
            .collect();
        Self {
            per_fold_f1,
            mean,
            std,
            per_class_f1,
        }
    }
}

/// Cross-validates a trainer over the given folds.
///
/// For fold `i` the training split is every document outside fold `i`,
/// turned into classifier input by `text_of`. The optional `augmenter`
/// receives the training-split documents and returns extra examples; each
/// must trace back to a training-split document or the run fails with
/// [`EvalError::Leakage`]. Folds run in parallel; results are assembled in
/// fold order.
pub fn cross_validate<C, T, A, X>(
    corpus: &LabeledCorpus,
    folds: &FoldAssignment,
    text_of: X,
    trainer: T,
    augmenter: Option<A>,
) -> Result<FoldReport, EvalError>
where
    C: Classifier,
    X: Fn(&Document) -> String + Sync,
    T: Fn(&[TrainingExample]) -> Result<C, BoxError> + Sync,
    A: Fn(&[&Document]) -> Result<Vec<TrainingExample>, BoxError> + Sync,
{
    if let Some(d) = corpus
        .documents()
        .iter()
        .find(|d| folds.fold(&d.id).is_none())
    {
        return Err(EvalError::Uncovered(d.id.clone()));
    }
    let results: Vec<(f64, BTreeMap<String, f64>)> = (0..folds.k)
        .into_par_iter()
        .map(|fold| {
            let (held_out, train): (Vec<&Document>, Vec<&Document>) = corpus
                .documents()
                .iter()
                .partition(|d| folds.fold(&d.id) == Some(fold));
            let mut examples: Vec<TrainingExample> = train
                .iter()
                .map(|d| TrainingExample {
                    text: text_of(d),
                    label: d.label.clone(),
                    provenance: Provenance::Original(d.id.clone()),
                })
                .collect();
            if let Some(augment) = &augmenter {
                let extra = augment(&train).map_err(|source| EvalError::Fold { fold, source })?;
                let train_ids: HashSet<&str> = train.iter().map(|d| d.id.as_str()).collect();
                if let Some(bad) = extra
                    .iter()
                    .find(|e| !train_ids.contains(e.provenance.source_id()))
                {
                    return Err(EvalError::Leakage {
                        fold,
                        source_id: bad.provenance.source_id().to_owned(),
                    });
                }
                examples.extend(extra);
            }
            let model = trainer(&examples).map_err(|source| EvalError::Fold { fold, source })?;
            let texts: Vec<String> = held_out.iter().map(|d| text_of(d)).collect();
            let gold: Vec<&str> = held_out.iter().map(|d| d.label.as_str()).collect();
            let pred = model.predict_all(&texts);
            let pred: Vec<&str> = pred.iter().map(String::as_str).collect();
            let per_class = per_class_f1(&gold, &pred)?;
            let f1 = per_class.values().sum::<f64>() / per_class.len() as f64;
            Ok((f1, per_class))
        })
        .collect::<Result<_, EvalError>>()?;
    let (f1s, per_class): (Vec<f64>, Vec<_>) = results.into_iter().unzip();
    Ok(FoldReport::from_folds(f1s, &per_class))
}

/// `82.61 ± 0.42` style cell (percentages, two decimals).
pub fn format_mean_std(report: &FoldReport) -> String {
    format!("{:.2} ± {:.2}", 100.0 * report.mean, 100.0 * report.std)
}

/// Tab-separated rows: setup, mean, std, then per-fold scores (percent).
pub fn render_tsv(rows: &[(String, FoldReport)]) -> String {
    let folds = rows
        .iter()
        .map(|(_, r)| r.per_fold_f1.len())
        .max()
        .unwrap_or(0);
    let mut out = String::from("setup\tmacro_f1_mean\tmacro_f1_std");
    for i in 0..folds {
        let _ = write!(out, "\tfold_{i}");
    }
    out.push('\n');
    for (name, r) in rows {
        let _ = write!(out, "{name}\t{:.4}\t{:.4}", 100.0 * r.mean, 100.0 * r.std);
        for f in &r.per_fold_f1 {
            let _ = write!(out, "\t{:.4}", 100.0 * f);
        }
        out.push('\n');
    }
    out
}

/// Aligned text table with one `mean ± std` column.
pub fn render_table(title: &str, rows: &[(String, FoldReport)]) -> String {
    let width = rows
        .iter()
        .map(|(n, _)| n.chars().count())
        .max()
        .unwrap_or(0)
        .max(5);
    let cells: Vec<String> = rows.iter().map(|(_, r)| format_mean_std(r)).collect();
    let cell_w = cells
        .iter()
        .map(|c| c.chars().count())
        .max()
        .unwrap_or(0)
        .max(title.chars().count());
    let mut out = String::new();
    let _ = writeln!(out, "{:width$}  {:>cell_w$}", "", title);
    let _ = writeln!(out, "{}", "-".repeat(width + 2 + cell_w));
    for ((name, _), cell) in rows.iter().zip(cells) {
        let _ = writeln!(out, "{name:width$}  {cell:>cell_w$}");
    }
    out
}
