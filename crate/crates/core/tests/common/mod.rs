//! Independent reference implementations used as test oracles. Nothing here
//! calls into the decoders or solvers under test.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;

use docaug::lm::{StepModel, TokenId};
use docaug::vectorize::SparseVector;

/// Exhaustive enumeration of every admissible output sequence: EOS is
/// forbidden before `min_len`, sequences end at EOS or at `max_len`.
/// Returns `(tokens, cumulative log-prob)` pairs in depth-first order.
pub fn enumerate_sequences(
    model: &dyn StepModel,
    max_len: usize,
    min_len: usize,
) -> Vec<(Vec<TokenId>, f64)> {
    fn walk(
        model: &dyn StepModel,
        max_len: usize,
        min_len: usize,
        prefix: &mut Vec<TokenId>,
        score: f64,
        out: &mut Vec<(Vec<TokenId>, f64)>,
    ) {
        let lps = model.step("", prefix).unwrap().log_probs;
        for (id, &lp) in lps.iter().enumerate() {
            let id = id as TokenId;
            if lp == f64::NEG_INFINITY || (id == model.eos_id() && prefix.len() < min_len) {
                continue;
            }
            prefix.push(id);
            let s = score + lp;
            if id == model.eos_id() || prefix.len() == max_len {
                out.push((prefix.clone(), s));
            } else {
                walk(model, max_len, min_len, prefix, s, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(model, max_len, min_len, &mut Vec::new(), 0.0, &mut out);
    out
}

/// Best sequence by `score / len^lp`; ties go to the lexicographically
/// smaller sequence.
pub fn brute_force_best(
    model: &dyn StepModel,
    max_len: usize,
    min_len: usize,
    length_penalty: f64,
) -> (Vec<TokenId>, f64, usize) {
    let all = enumerate_sequences(model, max_len, min_len);
    let count = all.len();
    let (tokens, score) = all
        .into_iter()
        .map(|(t, s)| {
            let n = s / (t.len() as f64).powf(length_penalty);
            (t, n)
        })
        .min_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        })
        .unwrap();
    (tokens, score, count)
}

/// Plain argmax decoding written out step by step.
pub fn reference_greedy(model: &dyn StepModel, max_len: usize, min_len: usize) -> Vec<TokenId> {
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let lps = model.step("", &tokens).unwrap().log_probs;
        let mut best: Option<(usize, f64)> = None;
        for (i, &lp) in lps.iter().enumerate() {
            if i as TokenId == model.eos_id() && tokens.len() < min_len {
                continue;
            }
            if lp > f64::NEG_INFINITY && best.is_none_or(|(_, b)| lp > b) {
                best = Some((i, lp));
            }
        }
        let next = best.unwrap().0 as TokenId;
        tokens.push(next);
        if next == model.eos_id() {
            break;
        }
    }
    tokens
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Recomputes the token contrastive search must select after `prefix`:
/// among the `k` most probable admissible tokens (ties: lower id), the
/// maximizer of `(1 − α)·p(v) − α·max_j cos(h_v, h_j)`.
pub fn contrastive_choice(
    model: &dyn StepModel,
    prefix: &[TokenId],
    min_len: usize,
    k: usize,
    alpha: f64,
) -> TokenId {
    let lps = model.step("", prefix).unwrap().log_probs;
    let mut pool: Vec<(TokenId, f64)> = lps
        .iter()
        .enumerate()
        .filter(|(i, lp)| {
            **lp > f64::NEG_INFINITY && !(*i as TokenId == model.eos_id() && prefix.len() < min_len)
        })
        .map(|(i, lp)| (i as TokenId, lp.exp()))
        .collect();
    pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    pool.truncate(k);
    let history: Vec<Vec<f64>> = (1..=prefix.len())
        .map(|j| model.step("", &prefix[..j]).unwrap().representation)
        .collect();
    let mut best: Option<(TokenId, f64)> = None;
    for (v, p) in pool {
        let mut probe = prefix.to_vec();
        probe.push(v);
        let h = model.step("", &probe).unwrap().representation;
        let penalty = history
            .iter()
            .map(|hj| cos(&h, hj))
            .reduce(f64::max)
            .unwrap_or(0.0);
        let score = (1.0 - alpha) * p - alpha * penalty;
        if best.is_none_or(|(bv, bs)| score > bs || (score == bs && v < bv)) {
            best = Some((v, score));
        }
    }
    best.unwrap().0
}

/// Empirical frequencies vs. an exact distribution, as L1 distance.
pub fn l1_distance(
    counts: &HashMap<TokenId, usize>,
    draws: usize,
    exact: &[(TokenId, f64)],
) -> f64 {
    let mut keys: Vec<TokenId> = counts
        .keys()
        .copied()
        .chain(exact.iter().map(|(t, _)| *t))
        .collect();
    keys.sort();
    keys.dedup();
    keys.iter()
        .map(|t| {
            let emp = *counts.get(t).unwrap_or(&0) as f64 / draws as f64;
            let p = exact.iter().find(|(e, _)| e == t).map_or(0.0, |(_, p)| *p);
            (emp - p).abs()
        })
        .sum()
}

/// Dense rows of sparse inputs, with the constant bias feature appended.
pub fn augmented_dense(x: &[SparseVector], dim: usize, bias: Option<f64>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|v| {
            let mut row = vec![0.0; dim];
            for (i, val) in v.iter() {
                row[i] = val;
            }
            if let Some(b) = bias {
                row.push(b);
            }
            row
        })
        .collect()
}

/// `½‖w‖² + C Σ max(0, 1 − y_i w·x_i)²` over dense augmented rows.
pub fn reference_primal(w: &[f64], rows: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, yi)| {
            let m: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
            (1.0 - yi * m).max(0.0).powi(2)
        })
        .sum();
    reg + c * loss
}

/// Slow, high-precision solver for the squared-hinge SVM dual
/// `min_{α ≥ 0} ½ αᵀ(Q + I/(2C))α − Σα`, `Q_ij = y_i y_j x_i·x_j`, by
/// projected gradient descent with step `1/L` (L from power iteration).
/// Returns the primal weights `Σ α_i y_i x_i`.
pub fn reference_svm(rows: &[Vec<f64>], y: &[f64], c: f64, tol: f64) -> Vec<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let diag = 1.0 / (2.0 * c);
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            q[i][j] = y[i] * y[j] * dot + if i == j { diag } else { 0.0 };
        }
    }
    let mut v = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mv: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * v[j]).sum())
            .collect();
        let norm = mv.iter().map(|x| x * x).sum::<f64>().sqrt();
        lambda = norm;
        v = mv.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (1.01 * lambda);
    let mut alpha = vec![0.0; n];
    for _ in 0..2_000_000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * alpha[j]).sum::<f64>() - 1.0)
            .collect();
        let violation = (0..n)
            .map(|i| {
                if alpha[i] == 0.0 {
                    grad[i].min(0.0).abs()
                } else {
                    grad[i].abs()
                }
            })
            .fold(0.0, f64::max);
        if violation < tol {
            break;
        }
        for i in 0..n {
            alpha[i] = (alpha[i] - step * grad[i]).max(0.0);
        }
    }
    let mut w = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            w[k] += alpha[i] * y[i] * rows[i][k];
        }
    }
    w
}

/// Per-class F1 from an explicit confusion count, averaged over gold classes.
pub fn reference_macro_f1(gold: &[&str], pred: &[&str]) -> f64 {
    let mut classes: Vec<&str> = gold.to_vec();
    classes.sort();
    classes.dedup();
    let mut total = 0.0;
    for c in &classes {
        let tp = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| g == &c && p == &c)
            .count() as f64;
        let fp = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| g != &c && p == &c)
            .count() as f64;
        let fn_ = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| g == &c && p != &c)
            .count() as f64;
        let f1 = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        total += f1;
    }
    total / classes.len() as f64
}
