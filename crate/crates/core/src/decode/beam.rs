use std::cmp::Ordering;

use super::{
    check_vocab, masked_log_probs, normalize, DecodeConfig, DecodeError, Hypothesis, Method,
};
use crate::lm::{StepModel, TokenId};

/// Orders by descending score, then lexicographically smaller tokens first.
fn by_score_then_tokens(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

struct Pool {
    capacity: usize,
    hyps: Vec<Hypothesis>,
}

impl Pool {
    fn is_full(&self) -> bool {
        self.hyps.len() >= self.capacity
    }

    fn worst(&self) -> Option<f64> {
        self.hyps.last().map(|h| h.normalized_score)
    }

    /// Merges a batch of finished hypotheses, keeping the best `capacity`.
    fn absorb(&mut self, batch: Vec<Hypothesis>) {
        if batch.is_empty() {
            return;
        }
        self.hyps.extend(batch);
        self.hyps.sort_by(|a, b| {
            by_score_then_tokens(
                (a.normalized_score, &a.tokens),
                (b.normalized_score, &b.tokens),
            )
        });
        self.hyps.truncate(self.capacity);
    }
}

/// Beam search over the full vocabulary.
///
/// Each step expands every live beam by every token, keeps the `num_beams`
/// best extensions by cumulative score, and moves extensions that end in EOS
/// or reach `max_len` into a completed pool of capacity `num_beams`, ranked by
/// normalized score. Search stops once no live beam can still beat the
/// pool's worst entry: for a live score `s ≤ 0` any completion scores at most
/// `s / max_len^length_penalty` after normalization.
///
/// Returns the pool sorted by normalized score (ties: smaller token sequence
/// first).
pub fn beam_search(
    model: &dyn StepModel,
    context: &str,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    cfg.expect_method("beam")?;
    let Method::Beam { num_beams } = cfg.method else {
        unreachable!()
    };
    let eos = model.eos_id();
    let mut pool = Pool {
        capacity: num_beams,
        hyps: Vec::with_capacity(num_beams),
    };
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let upper_bound = |score: f64| {
        if cfg.length_penalty > 0.0 {
            score / (cfg.max_len as f64).powf(cfg.length_penalty)
        } else {
            score
        }
    };

    while !live.is_empty() {
        let position = live[0].0.len();
        // (parent beam, token, cumulative score); sequences are materialized
        // only for the survivors.
        let mut candidates: Vec<(usize, TokenId, f64)> = Vec::new();
        for (beam, (tokens, score)) in live.iter().enumerate() {
            let out = model.step(context, tokens)?;
            check_vocab(model, &out.log_probs)?;
            let lps = masked_log_probs(&out.log_probs, eos, position, cfg.min_len);
            for (id, lp) in lps.iter().enumerate() {
                if *lp == f64::NEG_INFINITY || lp.is_nan() {
                    continue;
                }
                candidates.push((beam, id as TokenId, score + lp));
            }
        }
        if candidates.is_empty() && pool.hyps.is_empty() {
            return Err(DecodeError::NoCandidates(position));
        }
        // Parents share a length, so comparing (parent tokens, token) is the
        // lexicographic order of the extended sequences.
        let order = |a: &(usize, TokenId, f64), b: &(usize, TokenId, f64)| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| live[a.0].0.cmp(&live[b.0].0))
                .then(a.1.cmp(&b.1))
        };
        if candidates.len() > num_beams {
            candidates.select_nth_unstable_by(num_beams - 1, order);
            candidates.truncate(num_beams);
        }
        candidates.sort_by(order);

        let mut next_live = Vec::with_capacity(num_beams);
        let mut finished = Vec::new();
        for (beam, token, score) in candidates {
            let mut tokens = Vec::with_capacity(position + 1);
            tokens.extend_from_slice(&live[beam].0);
            tokens.push(token);
            if token == eos || tokens.len() >= cfg.max_len {
                let len = tokens.len();
                finished.push(Hypothesis {
                    normalized_score: normalize(score, len, cfg.length_penalty),
                    tokens,
                    score,
                    finished: true,
                });
            } else {
                next_live.push((tokens, score));
            }
        }
        pool.absorb(finished);
        live = next_live;

        if pool.is_full() {
            let worst = pool.worst().expect("pool is non-empty");
            let best_live = live
                .iter()
                .map(|(_, s)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            if upper_bound(best_live) <= worst {
                break;
            }
        }
    }
    Ok(pool.hyps)
}
