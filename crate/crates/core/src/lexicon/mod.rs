//! Per-token trait lexicons.
//!
//! A [`Lexicon`] maps token ids to [`TraitVector`]s. Tokens that never
//! appeared in the answer corpus read as the zero vector and are omitted
//! from the file.
//!
//! File layout (pretty-printed JSON, keys in this order):
//!
//! ```text
//! {
//!   "version": 1,
//!   "vocab_fingerprint": "...",
//!   "vocab_size": 1234,
//!   "traits": ["OPE", "CON", "EXT", "AGR", "NEU"],
//!   "M": [0.3, 0.3, 0.3, 0.3, 0.3],
//!   "epsilon": 0.001,
//!   "zero_convention": "exclude",
//!   "scale": [{"N": ..., "S": ..., "avg_pos": ..., "avg_neg": ..., "iterations": ..., "converged": true}, ...],
//!   "corpus_digest": "...",
//!   "entries": {"17": [v0, v1, v2, v3, v4], ...}
//! }
//! ```
//!
//! Entries are sorted by numeric token id and floats use the shortest
//! representation that round-trips, so load-then-save is byte-identical.

mod build;
mod solver;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use build::{
    build_lexicon, build_with_report, iterate_assignment, normalization_scaling, polarity_averages,
    polarity_averages_with, solve_traits, BuildError, BuildOptions, BuildReport, PolarityAverages, RawLexicon,
    TraitBuildReport,
};
pub use solver::{solve_ns, solve_ns_with, ScaleParams, SolveError, ZeroConvention};

use crate::tokenizer::TokenId;
use crate::traits::{TraitId, TraitVector};

pub const LEXICON_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LexiconIoError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed lexicon file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported lexicon version {0}")]
    Version(u32),
    #[error("entry for token {token} is outside a vocabulary of size {size}")]
    TokenOutOfRange { token: TokenId, size: usize },
    #[error("trait order must be OPE, CON, EXT, AGR, NEU")]
    TraitOrder,
}

/// Build metadata carried with a lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconMeta {
    pub vocab_fingerprint: String,
    /// Target `M` per trait.
    pub targets: TraitVector,
    pub epsilon: f64,
    pub zero_convention: ZeroConvention,
    pub scale: [ScaleParams; 5],
    pub corpus_digest: Option<String>,
}

/// An immutable token-to-trait map.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    rows: Vec<TraitVector>,
    meta: LexiconMeta,
}

impl Lexicon {
    pub(crate) fn from_dense(rows: Vec<TraitVector>, meta: LexiconMeta) -> Lexicon {
        Lexicon { rows, meta }
    }

    /// A hand-made lexicon. Scaling metadata is left empty and marked
    /// unconverged.
    ///
    /// # Panics
    ///
    /// If a token id is not below `vocab_size`.
    pub fn from_entries(
        vocab_fingerprint: impl Into<String>,
        vocab_size: usize,
        entries: impl IntoIterator<Item = (TokenId, TraitVector)>,
    ) -> Lexicon {
        let mut rows = vec![TraitVector::ZERO; vocab_size];
        for (id, v) in entries {
            rows[id as usize] = v;
        }
        let empty = ScaleParams { n: 1.0, s: 1.0, avg_pos: 0.0, avg_neg: 0.0, iterations: 0, converged: false };
        let meta = LexiconMeta {
            vocab_fingerprint: vocab_fingerprint.into(),
            targets: TraitVector::ZERO,
            epsilon: 0.0,
            zero_convention: ZeroConvention::Exclude,
            scale: [empty; 5],
            corpus_digest: None,
        };
        Lexicon { rows, meta }
    }

    /// The trait vector of a token; zero for unknown or out-of-range ids.
    pub fn get(&self, id: TokenId) -> TraitVector {
        self.rows.get(id as usize).copied().unwrap_or(TraitVector::ZERO)
    }

    pub fn meta(&self) -> &LexiconMeta {
        &self.meta
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.meta.vocab_fingerprint
    }

    /// Non-zero rows in ascending token order.
    pub fn entries(&self) -> impl Iterator<Item = (TokenId, TraitVector)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(i, v)| (i as TokenId, *v))
    }

    /// Tokens whose value for `trait_id` is strictly positive.
    pub fn high_tokens(&self, trait_id: TraitId) -> Vec<TokenId> {
        self.entries().filter(|(_, v)| v[trait_id] > 0.0).map(|(id, _)| id).collect()
    }

    /// (positive, negative) entry counts for a trait.
    pub fn sign_counts(&self, trait_id: TraitId) -> (usize, usize) {
        self.rows.iter().fold((0, 0), |(p, n), v| {
            let x = v[trait_id];
            (p + usize::from(x > 0.0), n + usize::from(x < 0.0))
        })
    }

    pub fn to_json(&self) -> String {
        let file = LexiconFile {
            version: LEXICON_VERSION,
            vocab_fingerprint: self.meta.vocab_fingerprint.clone(),
            vocab_size: self.rows.len(),
            traits: TraitId::ALL,
            m: self.meta.targets.0,
            epsilon: self.meta.epsilon,
            zero_convention: self.meta.zero_convention,
            scale: self.meta.scale,
            corpus_digest: self.meta.corpus_digest.clone(),
            entries: self.entries().map(|(id, v)| (id, v.0)).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("lexicon serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Lexicon, LexiconIoError> {
        let file: LexiconFile = serde_json::from_str(text)?;
        if file.version != LEXICON_VERSION {
            return Err(LexiconIoError::Version(file.version));
        }
        if file.traits != TraitId::ALL {
            return Err(LexiconIoError::TraitOrder);
        }
        let mut rows = vec![TraitVector::ZERO; file.vocab_size];
        for (id, v) in file.entries {
            let slot = rows
                .get_mut(id as usize)
                .ok_or(LexiconIoError::TokenOutOfRange { token: id, size: file.vocab_size })?;
            *slot = TraitVector(v);
        }
        let meta = LexiconMeta {
            vocab_fingerprint: file.vocab_fingerprint,
            targets: TraitVector(file.m),
            epsilon: file.epsilon,
            zero_convention: file.zero_convention,
            scale: file.scale,
            corpus_digest: file.corpus_digest,
        };
        Ok(Lexicon { rows, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LexiconIoError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|source| LexiconIoError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Lexicon, LexiconIoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| LexiconIoError::Io { path: path.display().to_string(), source })?;
        Lexicon::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    version: u32,
    vocab_fingerprint: String,
    vocab_size: usize,
    traits: [TraitId; 5],
    #[serde(rename = "M")]
    m: [f64; 5],
    epsilon: f64,
    zero_convention: ZeroConvention,
    scale: [ScaleParams; 5],
    corpus_digest: Option<String>,
    entries: BTreeMap<TokenId, [f64; 5]>,
}
