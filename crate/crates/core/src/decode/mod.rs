//! Decoding strategies over the [`StepModel`] contract: greedy, beam search,
//! top-k sampling, top-p (nucleus) sampling and contrastive search.
//!
//! All strategies share the same conventions:
//! * EOS is masked to −∞ while fewer than `min_len` tokens have been generated;
//! * generation stops at EOS or after `max_len` tokens;
//! * ties are broken in favour of the lowest token id;
//! * hypothesis scores are sums of the model's natural-log probabilities of
//!   the chosen tokens, with no renormalization after masking or truncation.

mod beam;
mod contrastive;
mod sampling;

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{LmError, StepModel, TokenId};

pub use beam::beam_search;
pub use contrastive::{
    contrastive_first_step_ranking, contrastive_search, contrastive_search_forced,
};
pub use sampling::{
    sample_candidates, top_k_candidates, top_k_sample, top_p_candidates, top_p_sample,
};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("no token can be generated at position {0}")]
    NoCandidates(usize),
    #[error(transparent)]
    Model(#[from] LmError),
}

/// Decoding method together with its method-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Greedy,
    Beam { num_beams: usize },
    TopK { k: usize },
    TopP { p: f64 },
    Contrastive { k: usize, alpha: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Beam { .. } => "beam",
            Method::TopK { .. } => "top_k",
            Method::TopP { .. } => "top_p",
            Method::Contrastive { .. } => "contrastive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub method: Method,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    /// Minimum number of generated tokens before EOS is allowed.
    pub min_len: usize,
    pub length_penalty: f64,
    pub seed: u64,
}

impl DecodeConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            max_len: 142,
            min_len: 5,
            length_penalty: 1.0,
            seed: 0,
        }
    }

    pub fn with_lengths(mut self, min_len: usize, max_len: usize) -> Self {
        self.min_len = min_len;
        self.max_len = max_len;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::Config(m.to_string()));
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if self.min_len > self.max_len {
            return bad("min_len must not exceed max_len");
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return bad("length_penalty must be a non-negative real");
        }
        match self.method {
            Method::Greedy => Ok(()),
            Method::Beam { num_beams } if num_beams < 1 => bad("num_beams must be at least 1"),
            Method::TopK { k } | Method::Contrastive { k, .. } if k < 1 => {
                bad("k must be at least 1")
            }
            Method::TopP { p } if !(p > 0.0 && p <= 1.0) => bad("p must lie in (0, 1]"),
            Method::Contrastive { alpha, .. } if !(0.0..=1.0).contains(&alpha) => {
                bad("alpha must lie in [0, 1]")
            }
            _ => Ok(()),
        }
    }

    fn expect_method(&self, name: &str) -> Result<(), DecodeError> {
        self.validate()?;
        if self.method.name() != name {
            return Err(DecodeError::Config(format!(
                "expected method {name}, got {}",
                self.method.name()
            )));
        }
        Ok(())
    }
}

/// A decoded sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens, EOS-terminated unless the length cap was hit.
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub normalized_score: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub(crate) fn new(tokens: Vec<TokenId>, score: f64, length_penalty: f64) -> Self {
        Self {
            normalized_score: normalize(score, tokens.len(), length_penalty),
            tokens,
            score,
            finished: true,
        }
    }
}

/// `score / len^length_penalty`.
pub fn normalize(score: f64, len: usize, length_penalty: f64) -> f64 {
    if len == 0 {
        score
    } else {
        score / (len as f64).powf(length_penalty)
    }
}

/// Applies the EOS mask for the given generation position.
pub(crate) fn masked_log_probs(
    log_probs: &[f64],
    eos: TokenId,
    position: usize,
    min_len: usize,
) -> Vec<f64> {
    let mut lps = log_probs.to_vec();
    if position < min_len {
        if let Some(lp) = lps.get_mut(eos as usize) {
            *lp = f64::NEG_INFINITY;
        }
    }
    lps
}

/// Index of the maximal finite value; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v == f64::NEG_INFINITY || v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Token ids sorted by descending value, ties by ascending id.
pub(crate) fn ranked(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn check_vocab(model: &dyn StepModel, log_probs: &[f64]) -> Result<(), DecodeError> {
    if log_probs.len() != model.vocab_size() {
        return Err(LmError::Protocol(format!(
            "step returned {} log-probabilities for a vocabulary of {}",
            log_probs.len(),
            model.vocab_size()
        ))
        .into());
    }
    Ok(())
}

/// Runs a token-by-token loop where `choose` picks the next token from the
/// masked log-probabilities.
pub(crate) fn run_stepwise(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
    mut choose: impl FnMut(&[f64], usize) -> Result<TokenId, DecodeError>,
) -> Result<Hypothesis, DecodeError> {
    let eos = model.eos_id();
    let mut tokens = Vec::new();
    let mut score = 0.0;
    while tokens.len() < cfg.max_len {
        let out = model.step(context, &tokens)?;
        check_vocab(model, &out.log_probs)?;
        let lps = masked_log_probs(&out.log_probs, eos, tokens.len(), cfg.min_len);
        let next = choose(&lps, tokens.len())?;
        score += lps[next as usize];
        tokens.push(next);
        if next == eos {
            break;
        }
    }
    Ok(Hypothesis::new(tokens, score, cfg.length_penalty))
}

/// Argmax decoding.
pub fn greedy(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    cfg.expect_method("greedy")?;
    greedy_unchecked(model, context, cfg)
}

pub(crate) fn greedy_unchecked(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    run_stepwise(model, context, cfg, |lps, pos| {
        argmax(lps)
            .map(|i| i as TokenId)
            .ok_or(DecodeError::NoCandidates(pos))
    })
}

/// Decodes once with whatever method `cfg` names.
pub fn decode(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    match cfg.method {
        Method::Greedy => greedy(model, context, cfg),
        Method::Beam { .. } => beam_search(model, context, cfg)?
            .into_iter()
            .next()
            .ok_or(DecodeError::NoCandidates(0)),
        Method::TopK { .. } => top_k_sample(model, context, cfg, &mut sampler_rng(cfg.seed, 0)),
        Method::TopP { .. } => top_p_sample(model, context, cfg, &mut sampler_rng(cfg.seed, 0)),
        Method::Contrastive { .. } => contrastive_search(model, context, cfg),
    }
}

/// Generator for sampling attempt `attempt` under base seed `seed`.
pub fn sampler_rng(seed: u64, attempt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ attempt)
}

/// Up to `n` distinct outputs for one context.
///
/// * beam: the `n` best completed hypotheses of one search;
/// * top-k / top-p: repeated sampling with attempt seeds `seed ^ i`, keeping
///   new sequences only, for at most `10·n` attempts;
/// * contrastive: the plain output first, then runs whose first token is
///   forced to the 2nd, 3rd, … ranked first-step candidate;
/// * greedy: the single greedy output.
///
/// Fewer than `n` sequences are returned (with a warning) when the method
/// cannot produce more distinct outputs.
pub fn generate_n_distinct(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
    n: usize,
) -> Result<Vec<Hypothesis>, DecodeError> {
    cfg.validate()?;
    if n == 0 {
        return Err(DecodeError::Config("n must be at least 1".into()));
    }
    let mut out: Vec<Hypothesis> = Vec::with_capacity(n);
    let mut seen: HashSet<Vec<TokenId>> = HashSet::new();
    let mut push = |h: Hypothesis, out: &mut Vec<Hypothesis>| {
        if seen.insert(h.tokens.clone()) {
            out.push(h);
        }
    };
    match cfg.method {
        Method::Greedy => push(greedy(model, context, cfg)?, &mut out),
        Method::Beam { num_beams } => {
            if num_beams < n {
                return Err(DecodeError::Config(format!(
                    "beam search with {num_beams} beams cannot yield {n} outputs"
                )));
            }
            for h in beam_search(model, context, cfg)?.into_iter().take(n) {
                push(h, &mut out);
            }
        }
        Method::TopK { .. } | Method::TopP { .. } => {
            for attempt in 0..(10 * n as u64) {
                if out.len() == n {
                    break;
                }
                let mut rng = sampler_rng(cfg.seed, attempt);
                let h = match cfg.method {
                    Method::TopK { .. } => top_k_sample(model, context, cfg, &mut rng)?,
                    _ => top_p_sample(model, context, cfg, &mut rng)?,
                };
                push(h, &mut out);
            }
        }
        Method::Contrastive { .. } => {
            push(contrastive_search(model, context, cfg)?, &mut out);
            if n > 1 {
                let ranking = contrastive_first_step_ranking(model, context, cfg)?;
                for &first in ranking.iter().skip(1) {
                    if out.len() == n {
                        break;
                    }
                    push(
                        contrastive_search_forced(model, context, cfg, Some(first))?,
                        &mut out,
                    );
                }
            }
        }
    }
    if out.len() < n {
        log::warn!(
            "{} produced {} distinct outputs, {} requested",
            cfg.method.name(),
            out.len(),
            n
        );
    }
    Ok(out)
}
