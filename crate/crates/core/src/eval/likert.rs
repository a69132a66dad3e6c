//! Likert scores: parsing judge replies and aggregating them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{StdConvention, Summary};
use crate::traits::TraitId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no score in 1..5 found in judge reply {raw:?}")]
pub struct ParseLikertError {
    pub raw: String,
}

/// Extracts the first standalone integer in `1..=5` from a judge reply.
///
/// A standalone integer is a run of ASCII digits not glued to letters,
/// other digits or a decimal point, so `"4.5"`, `"x3"` and `"15"` are
/// skipped.
pub fn parse_likert(reply: &str) -> Result<u8, ParseLikertError> {
    let chars: Vec<char> = reply.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let glued_before = start > 0 && (chars[start - 1].is_alphanumeric() || chars[start - 1] == '.' || chars[start - 1] == '_');
        let decimal_after = i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit();
        let glued_after = i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_');
        if glued_before || glued_after || decimal_after {
            continue;
        }
        let run: String = chars[start..i].iter().collect();
        if let Ok(v @ 1..=5) = run.parse::<u8>() {
            return Ok(v);
        }
    }
    Err(ParseLikertError { raw: reply.to_string() })
}

/// One judged answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertRecord {
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub question_id: String,
    pub beta: f64,
    pub score: u8,
    /// Judge id, or `"auto"` for frequency-proxy scoring.
    pub rater: String,
}

/// Mean and spread of Likert scores for one trait at one `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertCell {
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub beta: f64,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("no records to aggregate")]
    Empty,
    #[error("score {0} outside 1..5")]
    OutOfRange(u8),
}

/// Groups records by trait and `beta`, in trait order then ascending `beta`.
pub fn likert_aggregate(records: &[LikertRecord], convention: StdConvention) -> Result<Vec<LikertCell>, AggregateError> {
    if records.is_empty() {
        return Err(AggregateError::Empty);
    }
    if let Some(r) = records.iter().find(|r| !(1..=5).contains(&r.score)) {
        return Err(AggregateError::OutOfRange(r.score));
    }
    let mut groups: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.trait_id.index(), ordered_bits(r.beta)))
            .or_default()
            .push(f64::from(r.score));
    }
    Ok(groups
        .into_iter()
        .filter_map(|((t, bits), scores)| {
            let summary = Summary::of(&scores, convention)?;
            Some(LikertCell { trait_id: TraitId::from_index(t)?, beta: from_ordered_bits(bits), summary })
        })
        .collect())
}

// Maps f64 to u64 so that integer order matches numeric order.
fn ordered_bits(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_ordered_bits(b: u64) -> f64 {
    f64::from_bits(if b >> 63 == 1 { b & !(1 << 63) } else { !b })
}
