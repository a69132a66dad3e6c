//! Steered nucleus sampling.
//!
//! One decoding step is
//!
//! ```text
//! logits --softmax(x / T0)--> probs --top-p(P0)--> kept --(1 + G)--> reweighted --> sample
//! ```
//!
//! where `G = alpha * sum_t beta_t * L_t(token)` and `L` is the lexicon row
//! of the candidate token. Kept tokens keep their original probabilities
//! until reweighting; renormalization happens once, afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon::Lexicon;
use crate::tokenizer::TokenId;
use crate::traits::TraitVector;

/// Which cumulative mass decides whether a token survives the nucleus cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NucleusRule {
    /// Keep a token while the mass of the tokens kept before it is below
    /// `P0`. The token that crosses the threshold is kept.
    ExclusivePrefix,
    /// Keep a token only if the mass up to and including it is below `P0`;
    /// the crossing token is dropped. At least one token is always kept.
    InclusivePrefix,
}

/// The rule used by [`top_p_filter`].
pub const NUCLEUS_RULE: NucleusRule = NucleusRule::ExclusivePrefix;

/// User-facing steering controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    /// Global injection strength.
    pub alpha: f64,
    /// Per-trait direction and weight.
    pub beta: TraitVector,
    /// Nucleus threshold, in `(0, 1]`.
    pub top_p: f64,
    /// Softmax temperature, `> 0`.
    pub temperature: f64,
}

impl SteeringConfig {
    pub const DEFAULT_ALPHA: f64 = 1.0;
    pub const DEFAULT_TOP_P: f64 = 0.95;
    pub const DEFAULT_TEMPERATURE: f64 = 0.85;

    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(DecodeError::InvalidTopP(self.top_p));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DecodeError::InvalidTemperature(self.temperature));
        }
        if !self.alpha.is_finite() || self.beta.0.iter().any(|b| !b.is_finite()) {
            return Err(DecodeError::NonFiniteControl);
        }
        Ok(())
    }

    pub fn with_beta(self, beta: TraitVector) -> SteeringConfig {
        SteeringConfig { beta, ..self }
    }
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            alpha: Self::DEFAULT_ALPHA,
            beta: TraitVector::ZERO,
            top_p: Self::DEFAULT_TOP_P,
            temperature: Self::DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("top-p threshold must lie in (0, 1], got {0}")]
    InvalidTopP(f64),
    #[error("alpha and beta must be finite")]
    NonFiniteControl,
    #[error("empty logit vector")]
    EmptyLogits,
    #[error("non-finite logit {value} at token {index}")]
    NonFiniteLogit { index: usize, value: f64 },
    #[error("cannot sample from an empty support")]
    EmptySupport,
    #[error("vocabulary fingerprint mismatch: source serves {source_fp}, lexicon was built for {lexicon_fp}")]
    FingerprintMismatch { source_fp: String, lexicon_fp: String },
}

/// Failure reported by a [`DistributionSource`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SourceError {
    #[error("i/o error talking to the source: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("source reported an error: {0}")]
    Remote(String),
    #[error("source returned {got} logits, expected {expected}")]
    Length { expected: usize, got: usize },
}

/// Anything that maps a token context to next-token logits over a fixed
/// vocabulary.
pub trait DistributionSource {
    fn vocab_size(&self) -> usize;

    fn vocab_fingerprint(&self) -> &str;

    /// Raw scores for the token following `context`; length `vocab_size()`.
    fn next_logits(&mut self, context: &[TokenId]) -> Result<Vec<f64>, SourceError>;
}

impl<S: DistributionSource + ?Sized> DistributionSource for &mut S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn vocab_fingerprint(&self) -> &str {
        (**self).vocab_fingerprint()
    }

    fn next_logits(&mut self, context: &[TokenId]) -> Result<Vec<f64>, SourceError> {
        (**self).next_logits(context)
    }
}

/// `softmax(logits / temperature)`, stabilized by subtracting the maximum.
pub fn softmax_temp(logits: &[f64], temperature: f64) -> Result<Vec<f64>, DecodeError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DecodeError::InvalidTemperature(temperature));
    }
    if logits.is_empty() {
        return Err(DecodeError::EmptyLogits);
    }
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(DecodeError::NonFiniteLogit { index, value });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Tokens surviving the nucleus cut, most probable first, with their
/// unnormalized original probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Nucleus {
    pub kept: Vec<(TokenId, f64)>,
}

impl Nucleus {
    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.kept.iter().map(|(id, _)| *id)
    }

    /// Kept probabilities rescaled to sum to one.
    pub fn renormalized(&self) -> Vec<(TokenId, f64)> {
        let sum: f64 = self.kept.iter().map(|(_, p)| p).sum();
        self.kept.iter().map(|(id, p)| (*id, p / sum)).collect()
    }
}

/// Orders token ids by descending probability, ties by ascending id.
pub fn descending_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

pub fn top_p_filter(probs: &[f64], top_p: f64) -> Nucleus {
    top_p_filter_with(probs, top_p, NUCLEUS_RULE)
}

pub fn top_p_filter_with(probs: &[f64], top_p: f64, rule: NucleusRule) -> Nucleus {
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in descending_order(probs) {
        let p = probs[i];
        let keep = match rule {
            NucleusRule::ExclusivePrefix => mass < top_p,
            NucleusRule::InclusivePrefix => mass + p < top_p,
        };
        if !keep && !kept.is_empty() {
            break;
        }
        kept.push((i as TokenId, p));
        mass += p;
    }
    Nucleus { kept }
}

/// `alpha * sum_t beta_t * row_t`.
pub fn personality_gain(row: &TraitVector, cfg: &SteeringConfig) -> f64 {
    cfg.alpha * cfg.beta.dot(row)
}

/// Multiplies each kept probability by `1 + G`, clamps negative weights to
/// zero and renormalizes. If every weight clamps, returns the renormalized
/// nucleus unchanged.
pub fn reweight(nucleus: &Nucleus, lexicon: &Lexicon, cfg: &SteeringConfig) -> Vec<(TokenId, f64)> {
    let weights: Vec<(TokenId, f64)> = nucleus
        .kept
        .iter()
        .map(|&(id, p)| (id, (p * (1.0 + personality_gain(&lexicon.get(id), cfg))).max(0.0)))
        .collect();
    let sum: f64 = weights.iter().map(|(_, w)| w).sum();
    if sum > 0.0 {
        weights.into_iter().map(|(id, w)| (id, w / sum)).collect()
    } else {
        nucleus.renormalized()
    }
}

/// Draws one id from a normalized distribution using exactly one uniform
/// draw from `rng`.
pub fn sample<R: Rng + ?Sized>(dist: &[(TokenId, f64)], rng: &mut R) -> Result<TokenId, DecodeError> {
    if dist.iter().all(|(_, p)| *p <= 0.0) {
        return Err(DecodeError::EmptySupport);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, p) in dist {
        acc += p;
        if u < acc {
            return Ok(id);
        }
    }
    // Rounding left `acc` just under `u`; fall back to the last live entry.
    Ok(dist.iter().rev().find(|(_, p)| *p > 0.0).map(|(id, _)| *id).expect("non-empty support"))
}

/// The RNG for stream `stream` of a run seeded with `seed`. Streams of one
/// seed are independent, so work items can be reordered freely.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    pub max_tokens: usize,
    /// Generation stops (without emitting it) when this token is drawn.
    pub stop_token: Option<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StopToken,
    MaxTokens,
    SourceError,
}

/// A continuation, possibly cut short by a source failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub stop: StopReason,
    pub error: Option<SourceError>,
}

/// One full decoding step for a given logit vector.
pub fn next_distribution(
    logits: &[f64],
    lexicon: Option<&Lexicon>,
    cfg: &SteeringConfig,
) -> Result<Vec<(TokenId, f64)>, DecodeError> {
    let probs = softmax_temp(logits, cfg.temperature)?;
    let nucleus = top_p_filter(&probs, cfg.top_p);
    Ok(match lexicon {
        Some(lex) => reweight(&nucleus, lex, cfg),
        None => nucleus.renormalized(),
    })
}

/// Autoregressive sampling from `source`, steered by `lexicon` when given.
/// Returns only the continuation.
pub fn generate<S, R>(
    source: &mut S,
    lexicon: Option<&Lexicon>,
    cfg: &SteeringConfig,
    prompt: &[TokenId],
    opts: &GenerateOptions,
    rng: &mut R,
) -> Result<Generation, DecodeError>
where
    S: DistributionSource + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if let Some(lex) = lexicon {
        if lex.vocab_fingerprint() != source.vocab_fingerprint() {
            return Err(DecodeError::FingerprintMismatch {
                source_fp: source.vocab_fingerprint().to_string(),
                lexicon_fp: lex.vocab_fingerprint().to_string(),
            });
        }
    }
    let mut context = prompt.to_vec();
    let mut tokens = Vec::new();
    while tokens.len() < opts.max_tokens {
        let logits = match source.next_logits(&context) {
            Ok(l) if l.len() == source.vocab_size() => l,
            Ok(l) => {
                let error = SourceError::Length { expected: source.vocab_size(), got: l.len() };
                return Ok(Generation { tokens, stop: StopReason::SourceError, error: Some(error) });
            }
            Err(error) => {
                return Ok(Generation { tokens, stop: StopReason::SourceError, error: Some(error) });
            }
        };
        let dist = next_distribution(&logits, lexicon, cfg)?;
        let id = sample(&dist, rng)?;
        if Some(id) == opts.stop_token {
            return Ok(Generation { tokens, stop: StopReason::StopToken, error: None });
        }
        tokens.push(id);
        context.push(id);
    }
    Ok(Generation { tokens, stop: StopReason::MaxTokens, error: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traits::TraitId;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax_temp(&[0.0, 0.0], 0.3).unwrap(), vec![0.5, 0.5]);
        let p = softmax_temp(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!(close(p[0], 2.0 / 3.0, 1e-15) && close(p[1], 1.0 / 3.0, 1e-15));
        assert_eq!(softmax_temp(&[1000.0, 1000.0], 0.85).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(softmax_temp(&[0.0, f64::NAN], 1.0), Err(DecodeError::NonFiniteLogit { index: 1, .. })));
        assert!(matches!(softmax_temp(&[0.0], 0.0), Err(DecodeError::InvalidTemperature(_))));
        assert_eq!(softmax_temp(&[], 1.0), Err(DecodeError::EmptyLogits));
    }

    #[test]
    fn top_p_keeps_crossing_token() {
        let n = top_p_filter(&[0.5, 0.3, 0.15, 0.05], 0.9);
        assert_eq!(n.kept, vec![(0, 0.5), (1, 0.3), (2, 0.15)]);
        let all = top_p_filter(&[0.1, 0.2, 0.3, 0.4], 1.0);
        assert_eq!(all.kept.len(), 4);
        let one = top_p_filter(&[1.0, 0.0, 0.0], 0.3);
        assert_eq!(one.kept, vec![(0, 1.0)]);
    }

    #[test]
    fn inclusive_rule_drops_crossing_token() {
        let n = top_p_filter_with(&[0.5, 0.3, 0.15, 0.05], 0.9, NucleusRule::InclusivePrefix);
        assert_eq!(n.kept, vec![(0, 0.5), (1, 0.3)]);
        let n = top_p_filter_with(&[0.6, 0.4], 0.5, NucleusRule::InclusivePrefix);
        assert_eq!(n.kept, vec![(0, 0.6)]);
    }

    #[test]
    fn ties_break_by_id() {
        let n = top_p_filter(&[0.25, 0.25, 0.25, 0.25], 0.5);
        assert_eq!(n.ids().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn gain_is_linear() {
        let cfg = SteeringConfig { beta: TraitVector([1.0, -1.0, 0.0, 0.0, 0.0]), ..Default::default() };
        let row = TraitVector([0.3, 0.2, 0.0, 0.0, 0.0]);
        assert!(close(personality_gain(&row, &cfg), 0.1, 1e-15));
        let zero = SteeringConfig { beta: TraitVector::ZERO, ..cfg };
        assert_eq!(personality_gain(&TraitVector::splat(9.0), &zero), 0.0);
        let double = SteeringConfig { alpha: 2.0, ..cfg };
        assert_eq!(personality_gain(&row, &double), 2.0 * personality_gain(&row, &cfg));
    }

    fn two_token_lexicon(a: TraitVector) -> Lexicon {
        Lexicon::from_entries("fp", 2, [(0, a)])
    }

    #[test]
    fn reweight_example() {
        let nucleus = Nucleus { kept: vec![(0, 0.6), (1, 0.4)] };
        let lex = two_token_lexicon(TraitVector::single(TraitId::Openness, 0.5));
        let cfg = SteeringConfig { beta: TraitVector::single(TraitId::Openness, 1.0), ..Default::default() };
        let out = reweight(&nucleus, &lex, &cfg);
        assert!(close(out[0].1, 0.9 / 1.3, 1e-15), "{out:?}");
        assert!(close(out[1].1, 0.4 / 1.3, 1e-15));
        assert!(close(out[0].1, 0.6923, 1e-4));
    }

    #[test]
    fn reweight_alpha_zero_is_identity() {
        let nucleus = Nucleus { kept: vec![(0, 0.5), (1, 0.3)] };
        let lex = two_token_lexicon(TraitVector::splat(0.7));
        let cfg = SteeringConfig { alpha: 0.0, beta: TraitVector::splat(1.0), ..Default::default() };
        assert_eq!(reweight(&nucleus, &lex, &cfg), nucleus.renormalized());
    }

    #[test]
    fn reweight_clamps_negative_weights() {
        let nucleus = Nucleus { kept: vec![(0, 0.6), (1, 0.4)] };
        let lex = two_token_lexicon(TraitVector::single(TraitId::Openness, -0.8));
        let cfg = SteeringConfig {
            alpha: 2.0,
            beta: TraitVector::single(TraitId::Openness, 1.0),
            ..Default::default()
        };
        assert_eq!(reweight(&nucleus, &lex, &cfg), vec![(0, 0.0), (1, 1.0)]);

        // Every weight clamped: fall back to the plain nucleus.
        let lex = Lexicon::from_entries("fp", 2, [(0, TraitVector::splat(-1.0)), (1, TraitVector::splat(-1.0))]);
        assert_eq!(reweight(&nucleus, &lex, &cfg), nucleus.renormalized());
    }

    #[test]
    fn sampling() {
        let mut rng = seeded_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(sample(&[(0, 0.0), (7, 1.0)], &mut rng).unwrap(), 7);
        }
        assert_eq!(sample(&[], &mut rng), Err(DecodeError::EmptySupport));
        assert_eq!(sample(&[(1, 0.0)], &mut rng), Err(DecodeError::EmptySupport));

        let mut rng = seeded_rng(42, 3);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample(&[(0, 0.5), (1, 0.5)], &mut rng).unwrap() == 0).count();
        let freq = hits as f64 / n as f64;
        // 5 sigma for p = 0.5 and n = 1e5 is about 0.0079.
        assert!((freq - 0.5).abs() <= 0.01, "{freq}");

        let draws = |seed| {
            let mut rng = seeded_rng(seed, 0);
            (0..50).map(|_| sample(&[(0, 0.2), (1, 0.3), (2, 0.5)], &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draws(9), draws(9));
    }

    #[test]
    fn sample_consumes_one_draw() {
        let mut a = seeded_rng(5, 0);
        let mut b = seeded_rng(5, 0);
        sample(&[(0, 0.4), (1, 0.6)], &mut a).unwrap();
        let _: f64 = b.random();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn streams_differ() {
        let x: u64 = seeded_rng(1, 0).random();
        let y: u64 = seeded_rng(1, 1).random();
        assert_ne!(x, y);
    }

    #[test]
    fn raising_beta_can_lower_a_weakly_positive_token() {
        // Mass moves to the more strongly positive token.
        let nucleus = Nucleus { kept: vec![(0, 0.5), (1, 0.5)] };
        let lex = Lexicon::from_entries(
            "fp",
            2,
            [(0, TraitVector::single(TraitId::Openness, 0.1)), (1, TraitVector::single(TraitId::Openness, 0.3))],
        );
        let off = SteeringConfig { beta: TraitVector::ZERO, ..Default::default() };
        let on = off.with_beta(TraitVector::single(TraitId::Openness, 1.0));
        assert!(reweight(&nucleus, &lex, &on)[0].1 < reweight(&nucleus, &lex, &off)[0].1);
    }

    proptest! {
        #[test]
        fn outputs_are_normalized(
            logits in prop::collection::vec(-20.0f64..20.0, 1..40),
            t in 0.1f64..3.0,
            p in 0.01f64..=1.0,
            lex_vals in prop::collection::vec(-1.0f64..1.0, 40),
            beta in prop::array::uniform5(-1.0f64..1.0),
            alpha in 0.0f64..3.0,
        ) {
            let probs = softmax_temp(&logits, t).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let lex = Lexicon::from_entries(
                "fp",
                logits.len(),
                (0..logits.len()).map(|i| (i as TokenId, TraitVector::splat(lex_vals[i]))),
            );
            let cfg = SteeringConfig { alpha, beta: TraitVector(beta), top_p: p, temperature: t };
            let nucleus = top_p_filter(&probs, p);
            prop_assert!(!nucleus.kept.is_empty());
            let out = reweight(&nucleus, &lex, &cfg);
            prop_assert!(out.iter().all(|(_, w)| *w >= 0.0));
            prop_assert!((out.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn alpha_zero_is_exactly_neutral(
            logits in prop::collection::vec(-10.0f64..10.0, 1..30),
            p in 0.01f64..=1.0,
            beta in prop::array::uniform5(-1.0f64..1.0),
        ) {
            let probs = softmax_temp(&logits, 0.85).unwrap();
            let nucleus = top_p_filter(&probs, p);
            let lex = Lexicon::from_entries("fp", logits.len(), (0..logits.len()).map(|i| (i as TokenId, TraitVector::splat(0.4))));
            let cfg = SteeringConfig { alpha: 0.0, beta: TraitVector(beta), ..Default::default() };
            prop_assert_eq!(reweight(&nucleus, &lex, &cfg), nucleus.renormalized());
        }

        #[test]
        fn raising_beta_never_lowers_the_top_positive_token(
            probs_raw in prop::collection::vec(0.01f64..1.0, 2..20),
            vals in prop::collection::vec(-0.3f64..0.3, 20),
            b1 in -1.0f64..1.0,
            db in 0.0f64..1.0,
        ) {
            // Single-trait lexicon with |L| <= 0.3 and |beta| <= 2 keeps 1 + G > 0,
            // so no clamping interferes.
            let sum: f64 = probs_raw.iter().sum();
            let probs: Vec<f64> = probs_raw.iter().map(|p| p / sum).collect();
            let nucleus = top_p_filter(&probs, 1.0);
            let lex = Lexicon::from_entries(
                "fp",
                probs.len(),
                (0..probs.len()).map(|i| (i as TokenId, TraitVector::single(TraitId::Extraversion, vals[i]))),
            );
            let top = (0..probs.len()).map(|i| vals[i]).fold(f64::NEG_INFINITY, f64::max);
            let lo = SteeringConfig { beta: TraitVector::single(TraitId::Extraversion, b1), ..Default::default() };
            let hi = lo.with_beta(TraitVector::single(TraitId::Extraversion, b1 + db));
            let a = reweight(&nucleus, &lex, &lo);
            let b = reweight(&nucleus, &lex, &hi);
            for ((id, pa), (_, pb)) in a.iter().zip(&b) {
                let v = lex.get(*id)[TraitId::Extraversion];
                if v > 0.0 && v == top {
                    prop_assert!(*pb >= *pa * (1.0 - 1e-12), "{} {} {}", id, pa, pb);
                }
            }
        }
    }
}
