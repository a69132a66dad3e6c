//! Trait lexicons built from labeled answer corpora, and decode-time
//! steering of any next-token distribution with them.
//!
//! The pipeline has two halves:
//!
//! 1. **Building.** [`lexicon::iterate_assignment`] counts how often each
//!    token appears in High versus Low answers of each Big Five trait, and
//!    [`lexicon::normalization_scaling`] squashes the counts with a per-trait
//!    `S * tanh(v / N)` so that the positive and negative means hit a target.
//! 2. **Steering.** [`decoding::generate`] runs temperature softmax and
//!    nucleus filtering on a [`decoding::DistributionSource`], multiplies each
//!    kept probability by `1 + alpha * sum(beta_t * L_t)`, renormalizes and
//!    samples.
//!
//! [`toy_lm`] provides a small n-gram model to drive the pipeline without an
//! external model, [`bridge`] talks to one over stdio, and [`eval`] holds the
//! statistics and experiment harness. [`commands`] ties everything into
//! reproducible, manifest-backed runs.

pub mod bridge;
pub mod commands;
pub mod corpus;
pub mod decoding;
pub mod digest;
pub mod eval;
pub mod lexicon;
pub mod tokenizer;
pub mod toy_lm;
pub mod traits;

pub use corpus::{AnswerCorpus, QuestionSet};
pub use decoding::{DistributionSource, SteeringConfig};
pub use lexicon::{Lexicon, RawLexicon};
pub use tokenizer::{TokenId, Vocab};
pub use traits::{Polarity, TraitId, TraitVector};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/lexicon.md")]
    mod lexicon {}
    #[doc = include_str!("../../../book/src/steering.md")]
    mod steering {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
