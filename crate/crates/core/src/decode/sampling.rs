use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{ranked, run_stepwise, DecodeConfig, DecodeError, Hypothesis, Method};
use crate::lm::{StepModel, TokenId};

/// Slack on the cumulative-mass comparison so that sums like
/// `0.5 + 0.3 + 0.15` still reach `p = 0.95` after rounding.
const MASS_EPS: f64 = 1e-12;

/// The `k` most probable tokens (ties: lower id), renormalized.
/// Zero-probability tokens are never candidates.
pub fn top_k_candidates(probs: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let chosen: Vec<usize> = ranked(probs)
        .into_iter()
        .filter(|&i| probs[i] > 0.0)
        .take(k)
        .collect();
    renormalize(probs, &chosen)
}

/// Shortest probability-sorted prefix whose mass reaches `p`, renormalized.
pub fn top_p_candidates(probs: &[f64], p: f64) -> Vec<(TokenId, f64)> {
    let mut chosen = Vec::new();
    let mut mass = 0.0;
    for i in ranked(probs).into_iter().filter(|&i| probs[i] > 0.0) {
        chosen.push(i);
        mass += probs[i];
        if mass >= p - MASS_EPS {
            break;
        }
    }
    renormalize(probs, &chosen)
}

fn renormalize(probs: &[f64], chosen: &[usize]) -> Vec<(TokenId, f64)> {
    let total: f64 = chosen.iter().map(|&i| probs[i]).sum();
    chosen
        .iter()
        .map(|&i| (i as TokenId, probs[i] / total))
        .collect()
}

/// Draws one token from a candidate distribution.
pub fn sample_candidates<R: Rng + ?Sized>(
    candidates: &[(TokenId, f64)],
    rng: &mut R,
) -> Option<TokenId> {
    let dist = WeightedIndex::new(candidates.iter().map(|(_, p)| *p)).ok()?;
    Some(candidates[dist.sample(rng)].0)
}

fn sample_with<R: Rng + ?Sized>(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
    rng: &mut R,
    truncate: impl Fn(&[f64]) -> Vec<(TokenId, f64)>,
) -> Result<Hypothesis, DecodeError> {
    run_stepwise(model, context, cfg, |lps, pos| {
        let probs: Vec<f64> = lps.iter().map(|lp| lp.exp()).collect();
        sample_candidates(&truncate(&probs), rng).ok_or(DecodeError::NoCandidates(pos))
    })
}

/// Top-k sampling.
pub fn top_k_sample<R: Rng + ?Sized>(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Hypothesis, DecodeError> {
    cfg.expect_method("top_k")?;
    let Method::TopK { k } = cfg.method else {
        unreachable!()
    };
    sample_with(model, context, cfg, rng, |probs| top_k_candidates(probs, k))
}

/// Nucleus sampling.
pub fn top_p_sample<R: Rng + ?Sized>(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Hypothesis, DecodeError> {
    cfg.expect_method("top_p")?;
    let Method::TopP { p } = cfg.method else {
        unreachable!()
    };
    sample_with(model, context, cfg, rng, |probs| top_p_candidates(probs, p))
}
