//! Lexicon construction: raw per-token counts, then per-trait scaling.

use serde::Serialize;

use super::solver::{solve_ns_with, ScaleParams, SolveError, ZeroConvention};
use super::{Lexicon, LexiconMeta};
use crate::corpus::AnswerCorpus;
use crate::tokenizer::{tokenize, Vocab};
use crate::traits::{TraitId, TraitVector};

/// Net counts per token and trait: occurrences in High answers minus
/// occurrences in Low answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLexicon {
    values: Vec<[i64; 5]>,
    vocab_fingerprint: String,
    /// Characters the tokenizer could not cover, summed over the corpus.
    pub skipped_chars: usize,
}

impl RawLexicon {
    pub fn zeros(vocab: &Vocab) -> RawLexicon {
        RawLexicon {
            values: vec![[0; 5]; vocab.len()],
            vocab_fingerprint: vocab.fingerprint().to_string(),
            skipped_chars: 0,
        }
    }

    /// Builds from explicit rows, e.g. for hand-made fixtures.
    pub fn from_rows(rows: Vec<[i64; 5]>, vocab_fingerprint: impl Into<String>) -> RawLexicon {
        RawLexicon { values: rows, vocab_fingerprint: vocab_fingerprint.into(), skipped_chars: 0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, token: usize, trait_id: TraitId) -> i64 {
        self.values[token][trait_id.index()]
    }

    pub fn rows(&self) -> &[[i64; 5]] {
        &self.values
    }

    pub fn column(&self, trait_id: TraitId) -> Vec<i64> {
        self.values.iter().map(|row| row[trait_id.index()]).collect()
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    /// Multiplies every count by `k`.
    pub fn scaled(&self, k: i64) -> RawLexicon {
        let mut out = self.clone();
        for row in &mut out.values {
            for v in row.iter_mut() {
                *v *= k;
            }
        }
        out
    }
}

/// Counts every token occurrence of every answer: `+1` under High, `-1`
/// under Low, into the answer's trait slot.
pub fn iterate_assignment(corpus: &AnswerCorpus, vocab: &Vocab) -> RawLexicon {
    let mut raw = RawLexicon::zeros(vocab);
    for answer in corpus.entries() {
        let t = answer.trait_id.index();
        let sign = answer.polarity.sign();
        let tokens = tokenize(vocab, &answer.text);
        raw.skipped_chars += tokens.skipped;
        for id in tokens.ids {
            raw.values[id as usize][t] += sign;
        }
    }
    raw
}

/// Means of the positive and negative subsets of one trait column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolarityAverages {
    pub avg_pos: f64,
    /// Mean magnitude of the negative entries.
    pub avg_neg_mag: f64,
    /// Number of strictly positive entries.
    pub m: usize,
    /// Number of strictly negative entries.
    pub n: usize,
}

pub fn polarity_averages(raw: &RawLexicon, trait_id: TraitId) -> PolarityAverages {
    polarity_averages_with(raw, trait_id, ZeroConvention::Exclude)
}

pub fn polarity_averages_with(
    raw: &RawLexicon,
    trait_id: TraitId,
    convention: ZeroConvention,
) -> PolarityAverages {
    let col = raw.column(trait_id);
    let values: Vec<f64> = col.iter().map(|v| *v as f64).collect();
    averages_of(&values, convention)
}

pub(crate) fn averages_of(values: &[f64], convention: ZeroConvention) -> PolarityAverages {
    let (mut sum_pos, mut sum_neg, mut m, mut n, mut zeros) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for &v in values {
        if v > 0.0 {
            sum_pos += v;
            m += 1;
        } else if v < 0.0 {
            sum_neg += -v;
            n += 1;
        } else {
            zeros += 1;
        }
    }
    let extra = match convention {
        ZeroConvention::Exclude => 0,
        ZeroConvention::CountInBoth => zeros,
    };
    let mean = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / (count + extra) as f64 };
    PolarityAverages { avg_pos: mean(sum_pos, m), avg_neg_mag: mean(sum_neg, n), m, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BuildOptions {
    /// Target mean magnitude per trait.
    pub targets: TraitVector,
    pub epsilon: f64,
    pub zero_convention: ZeroConvention,
}

impl BuildOptions {
    pub const DEFAULT_M: f64 = 0.3;
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    pub fn with_m(m: f64) -> BuildOptions {
        BuildOptions { targets: TraitVector::splat(m), ..Default::default() }
    }
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            targets: TraitVector::splat(Self::DEFAULT_M),
            epsilon: Self::DEFAULT_EPSILON,
            zero_convention: ZeroConvention::Exclude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("trait {trait_id}: {source}")]
pub struct BuildError {
    pub trait_id: TraitId,
    #[source]
    pub source: SolveError,
}

/// Solves the five traits independently, in parallel.
pub fn solve_traits(raw: &RawLexicon, opts: &BuildOptions) -> [Result<ScaleParams, SolveError>; 5] {
    let columns: Vec<Vec<f64>> = TraitId::ALL
        .iter()
        .map(|t| raw.column(*t).into_iter().map(|v| v as f64).collect())
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = TraitId::ALL
            .iter()
            .zip(&columns)
            .map(|(t, col)| {
                let target = opts.targets[*t];
                scope.spawn(move || solve_ns_with(col, target, opts.epsilon, opts.zero_convention))
            })
            .collect();
        let mut out = handles.into_iter().map(|h| h.join().expect("solver thread panicked"));
        std::array::from_fn(|_| out.next().expect("five results"))
    })
}

/// Applies the solved `S * tanh(v / N)` transform per trait.
pub fn normalization_scaling(
    raw: &RawLexicon,
    opts: &BuildOptions,
    corpus_digest: Option<String>,
) -> Result<Lexicon, BuildError> {
    let solved = solve_traits(raw, opts);
    let mut scale = Vec::with_capacity(5);
    for (t, result) in TraitId::ALL.into_iter().zip(solved) {
        scale.push(result.map_err(|source| BuildError { trait_id: t, source })?);
    }
    let scale: [ScaleParams; 5] = scale.try_into().expect("five traits");
    Ok(apply_scaling(raw, opts, scale, corpus_digest))
}

pub(crate) fn apply_scaling(
    raw: &RawLexicon,
    opts: &BuildOptions,
    scale: [ScaleParams; 5],
    corpus_digest: Option<String>,
) -> Lexicon {
    let rows = raw
        .rows()
        .iter()
        .map(|row| {
            let mut v = TraitVector::ZERO;
            for t in TraitId::ALL {
                let x = row[t.index()];
                if x != 0 {
                    v[t] = scale[t.index()].apply(x as f64);
                }
            }
            v
        })
        .collect();
    let meta = LexiconMeta {
        vocab_fingerprint: raw.vocab_fingerprint().to_string(),
        targets: opts.targets,
        epsilon: opts.epsilon,
        zero_convention: opts.zero_convention,
        scale,
        corpus_digest,
    };
    Lexicon::from_dense(rows, meta)
}

/// Both stages in one call.
pub fn build_lexicon(corpus: &AnswerCorpus, vocab: &Vocab, opts: &BuildOptions) -> Result<Lexicon, BuildError> {
    let raw = iterate_assignment(corpus, vocab);
    normalization_scaling(&raw, opts, Some(corpus.digest()))
}

/// Per-trait outcome of a build, kept even when some trait fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraitBuildReport {
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub raw: PolarityAverages,
    pub target: f64,
    #[serde(rename = "N")]
    pub n: Option<f64>,
    #[serde(rename = "S")]
    pub s: Option<f64>,
    pub residual_pos: Option<f64>,
    pub residual_neg: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    pub converged: bool,
    pub epsilon: f64,
    pub skipped_chars: usize,
    pub traits: Vec<TraitBuildReport>,
}

/// Runs the scaling stage and returns the lexicon (if every trait solved)
/// together with a report covering all five traits.
pub fn build_with_report(
    raw: &RawLexicon,
    opts: &BuildOptions,
    corpus_digest: Option<String>,
) -> (Option<Lexicon>, BuildReport) {
    let solved = solve_traits(raw, opts);
    let mut traits = Vec::with_capacity(5);
    for (t, result) in TraitId::ALL.into_iter().zip(&solved) {
        let averages = polarity_averages_with(raw, t, opts.zero_convention);
        let target = opts.targets[t];
        let (params, error) = match result {
            Ok(p) => (Some(*p), None),
            Err(SolveError::NonConvergence { best, .. }) => (Some(*best), Some(result.clone().unwrap_err().to_string())),
            Err(e) => (None, Some(e.to_string())),
        };
        traits.push(TraitBuildReport {
            trait_id: t,
            raw: averages,
            target,
            n: params.map(|p| p.n),
            s: params.map(|p| p.s),
            residual_pos: params.map(|p| p.residual_pos(target, averages.m > 0)),
            residual_neg: params.map(|p| p.residual_neg(target, averages.n > 0)),
            converged: result.is_ok(),
            error,
        });
    }
    let converged = solved.iter().all(Result::is_ok);
    let lexicon = if converged {
        let scale: [ScaleParams; 5] = std::array::from_fn(|i| *solved[i].as_ref().expect("checked"));
        Some(apply_scaling(raw, opts, scale, corpus_digest))
    } else {
        None
    };
    (lexicon, BuildReport { converged, epsilon: opts.epsilon, skipped_chars: raw.skipped_chars, traits })
}
