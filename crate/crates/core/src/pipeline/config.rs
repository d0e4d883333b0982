use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::PipelineError;
use crate::corpus::DEFAULT_LOW_RESOURCE_THRESHOLD;
use crate::decode::{DecodeConfig, Method};
use crate::svm::TrainConfig;
use crate::vectorize::TfidfConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TitleMode {
    /// Document text only.
    Text,
    /// Title prepended to the text.
    TitleText,
}

impl FromStr for TitleMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "D" | "d" => Ok(TitleMode::Text),
            "T+D" | "t+d" => Ok(TitleMode::TitleText),
            _ => Err(PipelineError::Config(format!(
                "title_mode must be D or T+D, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for TitleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TitleMode::Text => "D",
            TitleMode::TitleText => "T+D",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Augmentation {
    None,
    Beam3,
    Beam5,
    Beam10,
    TopK,
    TopP,
    Contrastive,
}

impl Augmentation {
    pub const ALL: [Augmentation; 7] = [
        Augmentation::None,
        Augmentation::Beam3,
        Augmentation::Beam5,
        Augmentation::Beam10,
        Augmentation::TopK,
        Augmentation::TopP,
        Augmentation::Contrastive,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Beam3 => "beam3",
            Augmentation::Beam5 => "beam5",
            Augmentation::Beam10 => "beam10",
            Augmentation::TopK => "top_k",
            Augmentation::TopP => "top_p",
            Augmentation::Contrastive => "contrastive",
        }
    }

    /// Row label used in comparison tables.
    pub fn row_label(&self) -> &'static str {
        match self {
            Augmentation::None => "no AUG",
            Augmentation::Beam3 => "AUG-3B",
            Augmentation::Beam5 => "AUG-5B",
            Augmentation::Beam10 => "AUG-10B",
            Augmentation::TopK => "AUG-K",
            Augmentation::TopP => "AUG-P",
            Augmentation::Contrastive => "AUG-C",
        }
    }
}

impl FromStr for Augmentation {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Augmentation::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown augmentation `{s}`")))
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Backend {
    Toy,
    Remote(String),
}

impl FromStr for Backend {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "toy" {
            Ok(Backend::Toy)
        } else if let Some(url) = s.strip_prefix("remote:") {
            Ok(Backend::Remote(url.trim_end_matches('/').to_owned()))
        } else {
            Err(PipelineError::Config(format!(
                "backend must be `toy` or `remote:<url>`, got `{s}`"
            )))
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Toy => f.write_str("toy"),
            Backend::Remote(url) => write!(f, "remote:{url}"),
        }
    }
}

/// Every knob of one experiment. Serialized as a flat `key = value` file;
/// see [`ExperimentConfig::KEYS`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub train_path: PathBuf,
    /// Precomputed augmentation file; generated when absent.
    pub augmented_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub title_mode: TitleMode,
    pub augmentation: Augmentation,
    pub summaries_per_doc: usize,
    pub low_resource_threshold: usize,
    pub folds: usize,
    pub seed: u64,
    pub backend: Backend,
    pub workers: usize,
    pub max_len: usize,
    pub min_len: usize,
    pub length_penalty: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub contrastive_k: usize,
    pub alpha: f64,
    pub toy_dim: usize,
    pub min_df: usize,
    pub max_df: f64,
    pub ngram_max: usize,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub svm_max_sweeps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_path: PathBuf::from("train.jsonl"),
            augmented_path: None,
            output_dir: PathBuf::from("runs/default"),
            cache_dir: None,
            title_mode: TitleMode::TitleText,
            augmentation: Augmentation::None,
            summaries_per_doc: 3,
            low_resource_threshold: DEFAULT_LOW_RESOURCE_THRESHOLD,
            folds: 5,
            seed: 42,
            backend: Backend::Toy,
            workers: 0,
            max_len: 142,
            min_len: 5,
            length_penalty: 1.0,
            top_k: 640,
            top_p: 0.95,
            contrastive_k: 4,
            alpha: 0.6,
            toy_dim: crate::lm::TOY_DIM,
            min_df: 3,
            max_df: 0.9,
            ngram_max: 3,
            svm_c: 1.0,
            svm_tol: 1e-4,
            svm_max_sweeps: 1000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 26] = [
        "train_path",
        "augmented_path",
        "output_dir",
        "cache_dir",
        "title_mode",
        "augmentation",
        "summaries_per_doc",
        "low_resource_threshold",
        "folds",
        "seed",
        "backend",
        "workers",
        "max_len",
        "min_len",
        "length_penalty",
        "top_k",
        "top_p",
        "contrastive_k",
        "alpha",
        "toy_dim",
        "min_df",
        "max_df",
        "ngram_max",
        "svm_c",
        "svm_tol",
        "svm_max_sweeps",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let value = value.trim();
        match key {
            "train_path" => self.train_path = PathBuf::from(value),
            "augmented_path" => self.augmented_path = optional_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "cache_dir" => self.cache_dir = optional_path(value),
            "title_mode" => self.title_mode = value.parse()?,
            "augmentation" => self.augmentation = value.parse()?,
            "summaries_per_doc" => self.summaries_per_doc = parse(key, value)?,
            "low_resource_threshold" => self.low_resource_threshold = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "backend" => self.backend = value.parse()?,
            "workers" => self.workers = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "min_len" => self.min_len = parse(key, value)?,
            "length_penalty" => self.length_penalty = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "top_p" => self.top_p = parse(key, value)?,
            "contrastive_k" => self.contrastive_k = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "toy_dim" => self.toy_dim = parse(key, value)?,
            "min_df" => self.min_df = parse(key, value)?,
            "max_df" => self.max_df = parse(key, value)?,
            "ngram_max" => self.ngram_max = parse(key, value)?,
            "svm_c" => self.svm_c = parse(key, value)?,
            "svm_tol" => self.svm_tol = parse(key, value)?,
            "svm_max_sweeps" => self.svm_max_sweeps = parse(key, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        };
        Some(match key {
            "train_path" => self.train_path.display().to_string(),
            "augmented_path" => path(&self.augmented_path),
            "output_dir" => self.output_dir.display().to_string(),
            "cache_dir" => path(&self.cache_dir),
            "title_mode" => self.title_mode.to_string(),
            "augmentation" => self.augmentation.to_string(),
            "summaries_per_doc" => self.summaries_per_doc.to_string(),
            "low_resource_threshold" => self.low_resource_threshold.to_string(),
            "folds" => self.folds.to_string(),
            "seed" => self.seed.to_string(),
            "backend" => self.backend.to_string(),
            "workers" => self.workers.to_string(),
            "max_len" => self.max_len.to_string(),
            "min_len" => self.min_len.to_string(),
            "length_penalty" => self.length_penalty.to_string(),
            "top_k" => self.top_k.to_string(),
            "top_p" => self.top_p.to_string(),
            "contrastive_k" => self.contrastive_k.to_string(),
            "alpha" => self.alpha.to_string(),
            "toy_dim" => self.toy_dim.to_string(),
            "min_df" => self.min_df.to_string(),
            "max_df" => self.max_df.to_string(),
            "ngram_max" => self.ngram_max.to_string(),
            "svm_c" => self.svm_c.to_string(),
            "svm_tol" => self.svm_tol.to_string(),
            "svm_max_sweeps" => self.svm_max_sweeps.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; blank lines and `#` comments are ignored.
    pub fn parse_kv(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(format!(
            "reading config {}",
            path.display()
        )))?;
        Self::parse_kv(&text)
    }

    pub fn to_kv(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.summaries_per_doc == 0 {
            return Err(PipelineError::Config(
                "summaries_per_doc must be positive".into(),
            ));
        }
        if self.folds < 2 {
            return Err(PipelineError::Config("folds must be at least 2".into()));
        }
        if self.low_resource_threshold == 0 {
            return Err(PipelineError::Config(
                "low_resource_threshold must be positive".into(),
            ));
        }
        if self.ngram_max == 0 {
            return Err(PipelineError::Config("ngram_max must be positive".into()));
        }
        if let Some(decode) = self.decode_config() {
            decode.validate()?;
            if let Method::Beam { num_beams } = decode.method {
                if num_beams < self.summaries_per_doc {
                    return Err(PipelineError::Config(format!(
                        "{num_beams} beams cannot yield {} distinct summaries",
                        self.summaries_per_doc
                    )));
                }
            }
        }
        Ok(())
    }

    /// Decoder settings for the configured augmentation, if any.
    pub fn decode_config(&self) -> Option<DecodeConfig> {
        let method = match self.augmentation {
            Augmentation::None => return None,
            Augmentation::Beam3 => Method::Beam { num_beams: 3 },
            Augmentation::Beam5 => Method::Beam { num_beams: 5 },
            Augmentation::Beam10 => Method::Beam { num_beams: 10 },
            Augmentation::TopK => Method::TopK { k: self.top_k },
            Augmentation::TopP => Method::TopP { p: self.top_p },
            Augmentation::Contrastive => Method::Contrastive {
                k: self.contrastive_k,
                alpha: self.alpha,
            },
        };
        Some(DecodeConfig {
            method,
            max_len: self.max_len,
            min_len: self.min_len,
            length_penalty: self.length_penalty,
            seed: self.seed,
        })
    }

    pub fn tfidf_config(&self) -> TfidfConfig {
        TfidfConfig {
            ngram_range: (1, self.ngram_max),
            min_df: self.min_df,
            max_df: self.max_df,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            c: self.svm_c,
            tol: self.svm_tol,
            max_sweeps: self.svm_max_sweeps,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Setup label for report rows, e.g. `AUG-C` or `no AUG (D)`.
    pub fn setup_label(&self) -> String {
        match self.title_mode {
            TitleMode::TitleText => self.augmentation.row_label().to_string(),
            TitleMode::Text => format!("{} ({})", self.augmentation.row_label(), self.title_mode),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.top_k, 640);
        assert_eq!(cfg.top_p, 0.95);
        assert_eq!(cfg.alpha, 0.6);
        assert_eq!(cfg.summaries_per_doc, 3);
        assert_eq!(cfg.low_resource_threshold, 500);
        assert_eq!(cfg.folds, 5);
        assert_eq!(cfg.tfidf_config(), TfidfConfig::default());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("augmentation", "contrastive").unwrap();
        cfg.set("backend", "remote:http://localhost:8000/").unwrap();
        cfg.set("cache_dir", "/tmp/cache").unwrap();
        cfg.set("title_mode", "D").unwrap();
        let text = cfg.to_kv();
        assert_eq!(ExperimentConfig::parse_kv(&text).unwrap(), cfg);
        assert!(text.contains("backend = remote:http://localhost:8000\n"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse_kv("nonsense").is_err());
        assert!(ExperimentConfig::parse_kv("unknown_key = 1").is_err());
        assert!(ExperimentConfig::parse_kv("folds = many").is_err());
        assert!(ExperimentConfig::parse_kv("augmentation = top_p\ntop_p = 1.5").is_err());
        assert!(ExperimentConfig::parse_kv("augmentation = beam3\nsummaries_per_doc = 4").is_err());
        assert!(ExperimentConfig::parse_kv("# comment\n\nfolds = 3\n").is_ok());
    }

    #[test]
    fn method_mapping() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.decode_config().is_none());
        for (tag, method) in [
            ("beam10", Method::Beam { num_beams: 10 }),
            ("top_k", Method::TopK { k: 640 }),
            ("top_p", Method::TopP { p: 0.95 }),
            ("contrastive", Method::Contrastive { k: 4, alpha: 0.6 }),
        ] {
            cfg.set("augmentation", tag).unwrap();
            assert_eq!(cfg.decode_config().unwrap().method, method);
        }
        assert_eq!(cfg.setup_label(), "AUG-C");
    }
}
