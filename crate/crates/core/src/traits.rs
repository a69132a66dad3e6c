//! Big Five trait identifiers and the five-slot value type used throughout
//! the crate.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the five Big Five traits, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraitId {
    #[serde(rename = "OPE")]
    Openness,
    #[serde(rename = "CON")]
    Conscientiousness,
    #[serde(rename = "EXT")]
    Extraversion,
    #[serde(rename = "AGR")]
    Agreeableness,
    #[serde(rename = "NEU")]
    Neuroticism,
}

impl TraitId {
    pub const ALL: [TraitId; 5] = [
        TraitId::Openness,
        TraitId::Conscientiousness,
        TraitId::Extraversion,
        TraitId::Agreeableness,
        TraitId::Neuroticism,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<TraitId> {
        Self::ALL.get(index).copied()
    }

    /// The three-letter code used in every file format.
    pub fn code(self) -> &'static str {
        match self {
            TraitId::Openness => "OPE",
            TraitId::Conscientiousness => "CON",
            TraitId::Extraversion => "EXT",
            TraitId::Agreeableness => "AGR",
            TraitId::Neuroticism => "NEU",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TraitId::Openness => "Openness",
            TraitId::Conscientiousness => "Conscientiousness",
            TraitId::Extraversion => "Extraversion",
            TraitId::Agreeableness => "Agreeableness",
            TraitId::Neuroticism => "Neuroticism",
        }
    }
}

impl fmt::Display for TraitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown trait label {0:?} (expected one of OPE, CON, EXT, AGR, NEU)")]
pub struct UnknownTrait(pub String);

impl FromStr for TraitId {
    type Err = UnknownTrait;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraitId::ALL
            .into_iter()
            .find(|t| t.code() == s)
            .ok_or_else(|| UnknownTrait(s.to_string()))
    }
}

/// High or low expression of a trait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    High,
    Low,
}

impl Polarity {
    /// Contribution of one token occurrence to the raw count.
    pub fn sign(self) -> i64 {
        match self {
            Polarity::High => 1,
            Polarity::Low => -1,
        }
    }

    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::High => Polarity::Low,
            Polarity::Low => Polarity::High,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Polarity::High => "High",
            Polarity::Low => "Low",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Subset index `2 * trait + (0 for High, 1 for Low)`.
pub fn subset_index(trait_id: TraitId, polarity: Polarity) -> usize {
    2 * trait_id.index() + usize::from(polarity == Polarity::Low)
}

/// Inverse of [`subset_index`].
pub fn subset_from_index(i: usize) -> Option<(TraitId, Polarity)> {
    let t = TraitId::from_index(i / 2)?;
    let p = if i.is_multiple_of(2) { Polarity::High } else { Polarity::Low };
    Some((t, p))
}

/// Five real values, one per trait, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraitVector(pub [f64; 5]);

impl TraitVector {
    pub const ZERO: TraitVector = TraitVector([0.0; 5]);

    pub fn splat(v: f64) -> TraitVector {
        TraitVector([v; 5])
    }

    /// A vector that is `v` on one trait and zero elsewhere.
    pub fn single(trait_id: TraitId, v: f64) -> TraitVector {
        let mut out = TraitVector::ZERO;
        out[trait_id] = v;
        out
    }

    pub fn dot(&self, other: &TraitVector) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

impl Index<TraitId> for TraitVector {
    type Output = f64;

    fn index(&self, t: TraitId) -> &f64 {
        &self.0[t.index()]
    }
}

impl IndexMut<TraitId> for TraitVector {
    fn index_mut(&mut self, t: TraitId) -> &mut f64 {
        &mut self.0[t.index()]
    }
}
