//! Step-model contract consumed by every decoder, and a deterministic bigram
//! toy model with unit-norm token embeddings.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub type TokenId = u32;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Dimension of toy token representations.
pub const TOY_DIM: usize = 16;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("cannot build a language model from an empty token stream")]
    EmptyTokenStream,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl LmError {
    /// Whether retrying the call could succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, LmError::Backend(_))
    }
}

/// Output of one model step: next-token log-probabilities and the
/// representation of the last consumed token.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub log_probs: Vec<f64>,
    pub representation: Vec<f64>,
}

impl StepOutput {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }
}

/// A conditional next-token model.
///
/// Implementations must be deterministic: the same `(context, prefix)` always
/// yields the same output. `prefix` holds generated token ids only; BOS is
/// implicit.
pub trait StepModel: Sync {
    fn vocab_size(&self) -> usize;
    fn bos_id(&self) -> TokenId;
    fn eos_id(&self) -> TokenId;
    fn step(&self, context: &str, prefix: &[TokenId]) -> Result<StepOutput, LmError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos_id: TokenId,
    eos_id: TokenId,
}

impl Vocabulary {
    /// BOS and EOS take ids 0 and 1; `words` follow in sorted order.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<&str> = words
            .into_iter()
            .filter(|w| *w != BOS_TOKEN && *w != EOS_TOKEN)
            .collect();
        let mut tokens = vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string()];
        tokens.extend(distinct.into_iter().map(str::to_owned));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            tokens,
            index,
            bos_id: 0,
            eos_id: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos_id(&self) -> TokenId {
        self.bos_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Joins tokens with spaces, dropping BOS and EOS.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != self.bos_id && id != self.eos_id)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Bigram language model over whitespace tokens.
///
/// Conditions only on the last token of the prefix and ignores the context
/// string entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    vocab: Vocabulary,
    /// Row-major |V|×|V| matrix; row = previous token, column = next token.
    bigram_log_probs: Vec<f64>,
    /// Row-major |V|×d matrix of unit-norm rows.
    embeddings: Vec<f64>,
    dim: usize,
}

/// Builds a bigram model with add-one smoothing.
///
/// Every text is framed as `BOS w1 .. wn EOS`. BOS is never an output: its
/// column gets zero probability, and the remaining |V|−1 outcomes are
/// smoothed, so `P(w | prev) = (c(prev, w) + 1) / (c(prev) + |V| − 1)`.
pub fn build_toy_lm<S: AsRef<str>>(texts: &[S], dim: usize, seed: u64) -> Result<ToyLm, LmError> {
    if dim == 0 {
        return Err(LmError::InvalidModel(
            "embedding dimension must be positive".into(),
        ));
    }
    let vocab = Vocabulary::from_words(texts.iter().flat_map(|t| t.as_ref().split_whitespace()));
    if vocab.len() == 2 {
        return Err(LmError::EmptyTokenStream);
    }
    let v = vocab.len();
    let mut counts = vec![0u64; v * v];
    for text in texts {
        let mut prev = vocab.bos_id;
        for word in text.as_ref().split_whitespace() {
            let id = vocab.id(word).expect("word is in vocabulary");
            counts[prev as usize * v + id as usize] += 1;
            prev = id;
        }
        if prev != vocab.bos_id {
            counts[prev as usize * v + vocab.eos_id as usize] += 1;
        }
    }
    let bos = vocab.bos_id as usize;
    let mut bigram_log_probs = vec![f64::NEG_INFINITY; v * v];
    for row in 0..v {
        let row_counts = &counts[row * v..(row + 1) * v];
        let total: u64 = row_counts.iter().sum();
        let denom = (total + (v as u64 - 1)) as f64;
        for col in (0..v).filter(|&c| c != bos) {
            bigram_log_probs[row * v + col] = ((row_counts[col] + 1) as f64 / denom).ln();
        }
    }
    let embeddings = random_unit_rows(v, dim, seed);
    Ok(ToyLm {
        vocab,
        bigram_log_probs,
        embeddings,
        dim,
    })
}

fn random_unit_rows(rows: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let mut row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            row[0] = 1.0;
        } else {
            row.iter_mut().for_each(|x| *x /= norm);
        }
        out.extend(row);
    }
    out
}

impl ToyLm {
    /// Assembles a model from explicit probability rows (one per token,
    /// including BOS) and embeddings. Rows must sum to 1 within 1e-6;
    /// embedding rows are rescaled to unit norm.
    pub fn from_parts(
        vocab: Vocabulary,
        prob_rows: Vec<Vec<f64>>,
        embedding_rows: Vec<Vec<f64>>,
    ) -> Result<Self, LmError> {
        let v = vocab.len();
        if prob_rows.len() != v || embedding_rows.len() != v {
            return Err(LmError::InvalidModel(format!(
                "expected {v} probability and embedding rows"
            )));
        }
        let dim = embedding_rows[0].len();
        let mut bigram_log_probs = Vec::with_capacity(v * v);
        for (i, row) in prob_rows.iter().enumerate() {
            if row.len() != v || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(LmError::InvalidModel(format!(
                    "row {i} is not a distribution"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(LmError::InvalidModel(format!("row {i} sums to {sum}")));
            }
            bigram_log_probs.extend(row.iter().map(|p| p.ln()));
        }
        let mut embeddings = Vec::with_capacity(v * dim);
        for (i, row) in embedding_rows.iter().enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if row.len() != dim || !norm.is_finite() || norm == 0.0 {
                return Err(LmError::InvalidModel(format!("bad embedding row {i}")));
            }
            embeddings.extend(row.iter().map(|x| x / norm));
        }
        Ok(Self {
            vocab,
            bigram_log_probs,
            embeddings,
            dim,
        })
    }

    /// A model over `n_words` synthetic words whose rows are drawn from a
    /// seeded generator (BOS column zero). Used for randomized testing.
    pub fn random(n_words: usize, dim: usize, seed: u64) -> Self {
        let words: Vec<String> = (0..n_words).map(|i| format!("w{i:02}")).collect();
        let vocab = Vocabulary::from_words(words.iter().map(String::as_str));
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_70e1);
        let rows = (0..v)
            .map(|_| {
                let mut row: Vec<f64> = (0..v)
                    .map(|c| {
                        if c == vocab.bos_id as usize {
                            0.0
                        } else {
                            // Skewed weights give peaked distributions.
                            rng.random::<f64>().powi(3) + 1e-3
                        }
                    })
                    .collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                row
            })
            .collect();
        let emb = random_unit_rows(v, dim, seed);
        let emb = emb.chunks(dim).map(<[f64]>::to_vec).collect();
        Self::from_parts(vocab, rows, emb).expect("generated rows are valid")
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_prob_row(&self, prev: TokenId) -> &[f64] {
        let v = self.vocab.len();
        &self.bigram_log_probs[prev as usize * v..(prev as usize + 1) * v]
    }

    pub fn embedding(&self, id: TokenId) -> &[f64] {
        &self.embeddings[id as usize * self.dim..(id as usize + 1) * self.dim]
    }
}

impl StepModel for ToyLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn bos_id(&self) -> TokenId {
        self.vocab.bos_id
    }

    fn eos_id(&self) -> TokenId {
        self.vocab.eos_id
    }

    fn step(&self, _context: &str, prefix: &[TokenId]) -> Result<StepOutput, LmError> {
        let size = self.vocab.len();
        if let Some(&id) = prefix.iter().find(|&&id| id as usize >= size) {
            return Err(LmError::TokenOutOfRange { id, size });
        }
        let last = prefix.last().copied().unwrap_or(self.vocab.bos_id);
        Ok(StepOutput {
            log_probs: self.log_prob_row(last).to_vec(),
            representation: self.embedding(last).to_vec(),
        })
    }
}
