//! A small add-delta n-gram model with backoff.
//!
//! For a context, the model uses the longest suffix (at most `order - 1`
//! tokens) that was seen in training and returns
//! `(count(context, w) + delta) / (count(context) + delta * |V|)`.
//! Contexts never seen fall back to shorter suffixes and finally to the
//! unigram table, so every token always has positive probability.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoding::{DistributionSource, SourceError};
use crate::tokenizer::{tokenize, TokenId, Vocab};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("order must be at least 1")]
    InvalidOrder,
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("no trainable window of {order} tokens in the training texts")]
    NoWindows { order: usize },
    #[error("text tokenizes to nothing")]
    EmptyText,
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid model file: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Continuations {
    total: u64,
    counts: BTreeMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    delta: f64,
    vocab_size: usize,
    vocab_fingerprint: String,
    eos: TokenId,
    /// `tables[l]` holds contexts of length `l`.
    tables: Vec<BTreeMap<Vec<TokenId>, Continuations>>,
}

/// Counts every window of every order up to `order` over the tokenized
/// texts.
pub fn train_ngram(texts: &[impl AsRef<str>], vocab: &Vocab, order: usize, delta: f64) -> Result<NGramModel, LmError> {
    if order == 0 {
        return Err(LmError::InvalidOrder);
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(LmError::InvalidDelta(delta));
    }
    let mut tables = vec![BTreeMap::new(); order];
    let mut full_windows = 0usize;
    for text in texts {
        let ids = tokenize(vocab, text.as_ref()).ids;
        for i in 0..ids.len() {
            for (len, table) in tables.iter_mut().enumerate() {
                if i < len {
                    break;
                }
                let entry: &mut Continuations = table.entry(ids[i - len..i].to_vec()).or_default();
                entry.total += 1;
                *entry.counts.entry(ids[i]).or_insert(0) += 1;
            }
        }
        full_windows += (ids.len() + 1).saturating_sub(order);
    }
    if full_windows == 0 {
        return Err(LmError::NoWindows { order });
    }
    Ok(NGramModel {
        order,
        delta,
        vocab_size: vocab.len(),
        vocab_fingerprint: vocab.fingerprint().to_string(),
        eos: vocab.eos(),
        tables,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    fn table_for(&self, context: &[TokenId]) -> &Continuations {
        let max_len = (self.order - 1).min(context.len());
        for len in (1..=max_len).rev() {
            if let Some(c) = self.tables[len].get(&context[context.len() - len..]) {
                return c;
            }
        }
        // Training guarantees at least one token, so the unigram table exists.
        &self.tables[0][&Vec::new()]
    }

    /// Smoothed conditional probabilities for the next token.
    pub fn probabilities(&self, context: &[TokenId]) -> Vec<f64> {
        let table = self.table_for(context);
        let denom = table.total as f64 + self.delta * self.vocab_size as f64;
        let mut probs = vec![self.delta / denom; self.vocab_size];
        for (&id, &c) in &table.counts {
            probs[id as usize] = (c as f64 + self.delta) / denom;
        }
        probs
    }

    pub fn probability(&self, context: &[TokenId], token: TokenId) -> f64 {
        let table = self.table_for(context);
        let c = table.counts.get(&token).copied().unwrap_or(0);
        (c as f64 + self.delta) / (table.total as f64 + self.delta * self.vocab_size as f64)
    }

    /// Natural-log probabilities; `softmax(logits, 1)` returns
    /// [`probabilities`](Self::probabilities).
    pub fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        self.probabilities(context).into_iter().map(f64::ln).collect()
    }

    /// `exp` of the mean negative log-likelihood of `tokens`, each predicted
    /// from `prefix` followed by the tokens before it.
    pub fn perplexity_ids(&self, prefix: &[TokenId], tokens: &[TokenId]) -> Result<f64, LmError> {
        if tokens.is_empty() {
            return Err(LmError::EmptyText);
        }
        let mut context = prefix.to_vec();
        let mut nll = 0.0;
        for &t in tokens {
            nll -= self.probability(&context, t).ln();
            context.push(t);
        }
        Ok((nll / tokens.len() as f64).exp())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION,
            order: self.order,
            delta: self.delta,
            vocab_size: self.vocab_size,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            eos: self.eos,
            tables: self
                .tables
                .iter()
                .flat_map(|t| t.iter())
                .map(|(context, c)| TableEntry { context: context.clone(), total: c.total, counts: c.counts.clone() })
                .collect(),
        };
        let mut s = serde_json::to_string(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<NGramModel, LmError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(LmError::Invalid(format!("unsupported version {}", file.version)));
        }
        if file.order == 0 {
            return Err(LmError::InvalidOrder);
        }
        if !(file.delta > 0.0 && file.delta.is_finite()) {
            return Err(LmError::InvalidDelta(file.delta));
        }
        let mut tables = vec![BTreeMap::new(); file.order];
        for e in file.tables {
            if e.context.len() >= file.order {
                return Err(LmError::Invalid(format!("context {:?} too long for order {}", e.context, file.order)));
            }
            if e.counts.keys().chain(&e.context).any(|id| *id as usize >= file.vocab_size) {
                return Err(LmError::Invalid("token id out of range".into()));
            }
            if e.counts.values().sum::<u64>() != e.total {
                return Err(LmError::Invalid(format!("counts for {:?} do not sum to total", e.context)));
            }
            tables[e.context.len()].insert(e.context, Continuations { total: e.total, counts: e.counts });
        }
        if !tables[0].contains_key(&Vec::new()) {
            return Err(LmError::Invalid("missing unigram table".into()));
        }
        Ok(NGramModel {
            order: file.order,
            delta: file.delta,
            vocab_size: file.vocab_size,
            vocab_fingerprint: file.vocab_fingerprint,
            eos: file.eos,
            tables,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| LmError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NGramModel, LmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| LmError::Io { path: path.display().to_string(), source })?;
        NGramModel::from_json(&text)
    }
}

/// Perplexity of a text under the model, natural-log convention.
pub fn perplexity(model: &NGramModel, text: &str, vocab: &Vocab) -> Result<f64, LmError> {
    model.perplexity_ids(&[], &tokenize(vocab, text).ids)
}

impl DistributionSource for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    fn next_logits(&mut self, context: &[TokenId]) -> Result<Vec<f64>, SourceError> {
        Ok(self.logits(context))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    delta: f64,
    vocab_size: usize,
    vocab_fingerprint: String,
    eos: TokenId,
    tables: Vec<TableEntry>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    context: Vec<TokenId>,
    total: u64,
    counts: BTreeMap<TokenId, u64>,
}
