use super::{
    check_vocab, masked_log_probs, top_k_candidates, DecodeConfig, DecodeError, Hypothesis, Method,
};
use crate::lm::{StepModel, StepOutput, TokenId};

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

struct Candidate {
    token: TokenId,
    score: f64,
    probe: StepOutput,
}

/// Scores the top-k candidates at one step. Each candidate is probed with
/// one extra model step to obtain its representation; the probe output is
/// kept so the chosen candidate's next-step distribution is not recomputed.
#[allow(clippy::too_many_arguments)]
fn score_candidates(
    model: &dyn StepModel,
    context: &str,
    prefix: &[TokenId],
    step: &StepOutput,
    history: &[Vec<f64>],
    cfg: &DecodeConfig,
    k: usize,
    alpha: f64,
) -> Result<Vec<Candidate>, DecodeError> {
    let lps = masked_log_probs(&step.log_probs, model.eos_id(), prefix.len(), cfg.min_len);
    let probs: Vec<f64> = lps.iter().map(|lp| lp.exp()).collect();
    let pool = top_k_candidates(&probs, k);
    let mut scored = Vec::with_capacity(pool.len());
    let mut probe_prefix = prefix.to_vec();
    for (token, _) in pool {
        probe_prefix.push(token);
        let probe = model.step(context, &probe_prefix)?;
        probe_prefix.pop();
        let penalty = history
            .iter()
            .map(|h| cosine(&probe.representation, h))
            .fold(f64::NEG_INFINITY, f64::max);
        let penalty = if history.is_empty() { 0.0 } else { penalty };
        scored.push(Candidate {
            token,
            score: (1.0 - alpha) * probs[token as usize] - alpha * penalty,
            probe,
        });
    }
    Ok(scored)
}

fn contrastive_params(cfg: &DecodeConfig) -> Result<(usize, f64), DecodeError> {
    cfg.expect_method("contrastive")?;
    let Method::Contrastive { k, alpha } = cfg.method else {
        unreachable!()
    };
    Ok((k, alpha))
}

/// Contrastive search: at each step pick, among the top-k tokens, the one
/// maximizing `(1 − alpha)·p(v) − alpha·max_j cos(h_v, h_j)`, where `h_j`
/// are the representations of previously generated tokens. The penalty is
/// zero at the first step.
pub fn contrastive_search(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    contrastive_search_forced(model, context, cfg, None)
}

/// Contrastive search with an optional forced first token.
pub fn contrastive_search_forced(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
    first: Option<TokenId>,
) -> Result<Hypothesis, DecodeError> {
    let (k, alpha) = contrastive_params(cfg)?;
    let eos = model.eos_id();
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut score = 0.0;
    let mut step = model.step(context, &tokens)?;
    check_vocab(model, &step.log_probs)?;

    while tokens.len() < cfg.max_len {
        let position = tokens.len();
        let lps = masked_log_probs(&step.log_probs, eos, position, cfg.min_len);
        let (chosen, next_step) = match first.filter(|_| position == 0) {
            Some(token) => {
                if lps
                    .get(token as usize)
                    .is_none_or(|lp| *lp == f64::NEG_INFINITY)
                {
                    return Err(DecodeError::Config(format!(
                        "forced token {token} is not allowed at the first step"
                    )));
                }
                (token, model.step(context, &[token])?)
            }
            None => {
                let candidates =
                    score_candidates(model, context, &tokens, &step, &history, cfg, k, alpha)?;
                // Candidates arrive in probability order, so equal scores are
                // resolved by token id explicitly.
                let c = candidates
                    .into_iter()
                    .reduce(|best, c| {
                        if c.score > best.score || (c.score == best.score && c.token < best.token) {
                            c
                        } else {
                            best
                        }
                    })
                    .ok_or(DecodeError::NoCandidates(position))?;
                (c.token, c.probe)
            }
        };
        check_vocab(model, &next_step.log_probs)?;
        score += lps[chosen as usize];
        tokens.push(chosen);
        history.push(next_step.representation.clone());
        step = next_step;
        if chosen == eos {
            break;
        }
    }
    Ok(Hypothesis::new(tokens, score, cfg.length_penalty))
}

/// First-step candidates ordered by contrastive score (best first). With no
/// history the penalty vanishes, so this is the probability ranking of the
/// top-k pool.
pub fn contrastive_first_step_ranking(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
) -> Result<Vec<TokenId>, DecodeError> {
    let (k, alpha) = contrastive_params(cfg)?;
    let step = model.step(context, &[])?;
    check_vocab(model, &step.log_probs)?;
    let mut candidates = score_candidates(model, context, &[], &step, &[], cfg, k, alpha)?;
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.token.cmp(&b.token)));
    Ok(candidates.into_iter().map(|c| c.token).collect())
}
