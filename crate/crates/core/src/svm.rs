//! L2-regularized squared-hinge linear SVM trained by dual coordinate
//! descent, with one-vs-rest multiclass prediction.
//!
//! The binary problem is
//!
//! ```text
//! min_w  ½‖w‖² + C Σ max(0, 1 − y_i w·x_i)²
//! ```
//!
//! and its dual `max_{α ≥ 0} Σα_i − ½‖Σ α_i y_i x_i‖² − Σ α_i² / (4C)`.
//! With an intercept, every `x_i` is augmented by a constant feature of
//! value `intercept_scaling`; the corresponding weight is regularized like
//! any other.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vectorize::SparseVector;

pub const LINEAR_MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training data contains a single class{}", .0.as_deref().map(|c| format!(" (`{c}`)")).unwrap_or_default())]
    SingleClass(Option<String>),
    #[error("{0} examples but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("labels must be +1 or −1, got {0}")]
    BadLabel(f64),
    #[error("feature dimension mismatch: model has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub c: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub fit_intercept: bool,
    pub intercept_scaling: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-4,
            max_sweeps: 1000,
            fit_intercept: true,
            intercept_scaling: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), SvmError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::Config("C must be positive".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(SvmError::Config("tol must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(SvmError::Config("max_sweeps must be positive".into()));
        }
        if !self.intercept_scaling.is_finite() {
            return Err(SvmError::Config("intercept_scaling must be finite".into()));
        }
        Ok(())
    }

    fn bias_feature(&self) -> Option<f64> {
        self.fit_intercept.then_some(self.intercept_scaling)
    }
}

/// Result of one binary solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    /// Feature weights followed by the intercept weight when fitted.
    pub weights: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Dual objective after each sweep.
    pub dual_objectives: Vec<f64>,
}

fn dense_dim(x: &[SparseVector]) -> usize {
    x.iter().map(|v| v.dim).max().unwrap_or(0)
}

/// `w·x` including the augmented bias feature.
fn margin(w: &[f64], x: &SparseVector, bias: Option<f64>) -> f64 {
    let mut m = x.dot(w);
    if let Some(b) = bias {
        m += w[w.len() - 1] * b;
    }
    m
}

/// Dual objective `Σα − ½‖w‖² − Σα²/(4C)` with `w = Σ α_i y_i x_i`.
pub fn dual_objective(alpha: &[f64], w: &[f64], c: f64) -> f64 {
    let sum: f64 = alpha.iter().sum();
    let sq: f64 = alpha.iter().map(|a| a * a).sum();
    let wn: f64 = w.iter().map(|v| v * v).sum();
    sum - 0.5 * wn - sq / (4.0 * c)
}

/// Primal objective `½‖w‖² + C Σ max(0, 1 − y w·x)²` (bias weight included).
pub fn primal_objective(w: &[f64], x: &[SparseVector], y: &[f64], cfg: &TrainConfig) -> f64 {
    let bias = cfg.bias_feature();
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (1.0 - yi * margin(w, xi, bias)).max(0.0).powi(2))
        .sum();
    reg + cfg.c * loss
}

/// Trains one binary squared-hinge SVM with labels in {+1, −1}.
pub fn train_binary(
    x: &[SparseVector],
    y: &[f64],
    cfg: &TrainConfig,
) -> Result<BinarySolution, SvmError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(SvmError::LengthMismatch(x.len(), y.len()));
    }
    if let Some(bad) = y.iter().find(|v| **v != 1.0 && **v != -1.0) {
        return Err(SvmError::BadLabel(*bad));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClass(None));
    }

    let bias = cfg.bias_feature();
    let dim = dense_dim(x);
    let mut w = vec![0.0; dim + usize::from(bias.is_some())];
    let mut alpha = vec![0.0; x.len()];
    let diag = 1.0 / (2.0 * cfg.c);
    let qii: Vec<f64> = x
        .iter()
        .map(|xi| xi.squared_norm() + bias.map_or(0.0, |b| b * b) + diag)
        .collect();

    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dual_objectives = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        order.shuffle(&mut rng);
        let mut max_violation: f64 = 0.0;
        for &i in &order {
            let (xi, yi) = (&x[i], y[i]);
            let g = yi * margin(&w, xi, bias) - 1.0 + diag * alpha[i];
            let pg = if alpha[i] == 0.0 { g.min(0.0) } else { g };
            max_violation = max_violation.max(pg.abs());
            if pg == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / qii[i]).max(0.0);
            let delta = (alpha[i] - old) * yi;
            if delta != 0.0 {
                for (j, v) in xi.iter() {
                    w[j] += delta * v;
                }
                if let Some(b) = bias {
                    w[dim] += delta * b;
                }
            }
        }
        dual_objectives.push(dual_objective(&alpha, &w, cfg.c));
        if max_violation < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "dual coordinate descent stopped after {sweeps} sweeps without reaching tol {}",
            cfg.tol
        );
    }
    Ok(BinarySolution {
        weights: w,
        alpha,
        sweeps,
        converged,
        dual_objectives,
    })
}

/// One-vs-rest linear model. Rows follow lexicographic class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub class_names: Vec<String>,
    /// One row per class; `dim` feature weights plus the intercept weight
    /// when `config.fit_intercept`.
    pub weights: Vec<Vec<f64>>,
    pub dim: usize,
    pub config: TrainConfig,
    /// Whether every binary problem converged.
    pub converged: bool,
}

#[derive(Serialize, Deserialize)]
struct LinearModelFile {
    format_version: u32,
    #[serde(flatten)]
    model: LinearModel,
}

pub fn train_ovr(
    x: &[SparseVector],
    labels: &[String],
    cfg: &TrainConfig,
) -> Result<LinearModel, SvmError> {
    if x.len() != labels.len() {
        return Err(SvmError::LengthMismatch(x.len(), labels.len()));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::SingleClass(classes.pop()));
    }
    let solutions: Vec<BinarySolution> = classes
        .par_iter()
        .map(|class| {
            let y: Vec<f64> = labels
                .iter()
                .map(|l| if l == class { 1.0 } else { -1.0 })
                .collect();
            train_binary(x, &y, cfg)
        })
        .collect::<Result<_, _>>()?;
    let converged = solutions.iter().all(|s| s.converged);
    Ok(LinearModel {
        class_names: classes,
        weights: solutions.into_iter().map(|s| s.weights).collect(),
        dim: dense_dim(x),
        config: cfg.clone(),
        converged,
    })
}

impl LinearModel {
    fn bias(&self) -> Option<f64> {
        self.config.bias_feature()
    }

    fn check_dim(&self, x: &SparseVector) -> Result<(), SvmError> {
        if x.dim != self.dim {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim,
                got: x.dim,
            });
        }
        Ok(())
    }

    pub fn decision_values(&self, x: &SparseVector) -> Result<Vec<f64>, SvmError> {
        self.check_dim(x)?;
        Ok(self
            .weights
            .iter()
            .map(|w| margin(w, x, self.bias()))
            .collect())
    }

    /// Class with the largest decision value; ties go to the
    /// lexicographically smaller class name.
    pub fn predict(&self, x: &SparseVector) -> Result<&str, SvmError> {
        let scores = self.decision_values(x)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate().skip(1) {
            if *s > scores[best] {
                best = i;
            }
        }
        Ok(&self.class_names[best])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SvmError> {
        let file = LinearModelFile {
            format_version: LINEAR_MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        let json = serde_json::to_string(&file).map_err(|e| SvmError::Format(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SvmError> {
        let raw = fs::read_to_string(path)?;
        let file: LinearModelFile =
            serde_json::from_str(&raw).map_err(|e| SvmError::Format(e.to_string()))?;
        if file.format_version != LINEAR_MODEL_FORMAT_VERSION {
            return Err(SvmError::Format(format!(
                "unsupported format version {}",
                file.format_version
            )));
        }
        Ok(file.model)
    }
}
