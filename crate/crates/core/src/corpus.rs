//! Answer corpora and question sets in line-delimited JSON.
//!
//! Corpus records look like `{"trait":"OPE","polarity":"High","text":"..."}`,
//! question records like `{"trait":"OPE","id":"OPE-001","text":"..."}`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::traits::{Polarity, TraitId};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus")]
    Empty,
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown trait label {label:?}")]
    UnknownTrait { line: usize, label: String },
    #[error("line {line}: unknown polarity label {label:?} (expected \"High\" or \"Low\")")]
    UnknownPolarity { line: usize, label: String },
    #[error("line {line}: empty text")]
    EmptyText { line: usize },
    #[error("line {line}: duplicate question id {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// One labeled answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub polarity: Polarity,
    pub text: String,
}

/// Answers grouped by (trait, polarity), in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnswerCorpus {
    entries: Vec<Answer>,
}

impl AnswerCorpus {
    /// Builds a corpus from answers, rejecting empty texts.
    pub fn new(entries: Vec<Answer>) -> Result<Self, CorpusError> {
        if let Some(i) = entries.iter().position(|a| a.text.is_empty()) {
            return Err(CorpusError::EmptyText { line: i + 1 });
        }
        Ok(AnswerCorpus { entries })
    }

    pub fn entries(&self) -> &[Answer] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry count per trait (outer) and polarity (inner, High first).
    pub fn counts(&self) -> [[usize; 2]; 5] {
        let mut c = [[0usize; 2]; 5];
        for a in &self.entries {
            c[a.trait_id.index()][usize::from(a.polarity == Polarity::Low)] += 1;
        }
        c
    }

    pub fn count(&self, trait_id: TraitId, polarity: Polarity) -> usize {
        self.counts()[trait_id.index()][usize::from(polarity == Polarity::Low)]
    }

    /// Texts of one (trait, polarity) subset, in file order.
    pub fn subset(&self, trait_id: TraitId, polarity: Polarity) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |a| a.trait_id == trait_id && a.polarity == polarity)
            .map(|a| a.text.as_str())
    }

    /// Copy of the corpus with High and Low swapped for one trait.
    pub fn with_swapped_polarity(&self, trait_id: TraitId) -> AnswerCorpus {
        let entries = self
            .entries
            .iter()
            .map(|a| {
                let mut a = a.clone();
                if a.trait_id == trait_id {
                    a.polarity = a.polarity.flipped();
                }
                a
            })
            .collect();
        AnswerCorpus { entries }
    }

    /// Canonical JSON-lines serialization, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.entries {
            out.push_str(&serde_json::to_string(a).expect("answer serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }
}

#[derive(Deserialize)]
struct RawAnswer {
    #[serde(rename = "trait")]
    trait_label: String,
    polarity: String,
    text: String,
}

/// Parses corpus records from a string. Blank lines are ignored.
pub fn parse_corpus(input: &str) -> Result<AnswerCorpus, CorpusError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnswer = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let trait_id = raw
            .trait_label
            .parse::<TraitId>()
            .map_err(|_| CorpusError::UnknownTrait { line: line_no, label: raw.trait_label.clone() })?;
        let polarity = match raw.polarity.as_str() {
            "High" => Polarity::High,
            "Low" => Polarity::Low,
            _ => {
                return Err(CorpusError::UnknownPolarity { line: line_no, label: raw.polarity });
            }
        };
        if raw.text.is_empty() {
            return Err(CorpusError::EmptyText { line: line_no });
        }
        entries.push(Answer { trait_id, polarity, text: raw.text });
    }
    if entries.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(AnswerCorpus { entries })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<AnswerCorpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    parse_corpus(&text)
}

/// Summary of a corpus' shape. Never mutates the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Entry counts, indexed `[trait][0 = High, 1 = Low]`.
    pub counts: [[usize; 2]; 5],
    /// Subsets with no entries.
    pub empty_subsets: Vec<(TraitId, Polarity)>,
    /// Number of entries whose text already appeared earlier in the corpus.
    pub duplicates: usize,
    pub balanced: bool,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_complete(&self) -> bool {
        self.warnings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in TraitId::ALL {
            let [h, l] = self.counts[t.index()];
            writeln!(f, "{t}  High={h:<5} Low={l}")?;
        }
        if self.warnings.is_empty() {
            writeln!(f, "complete")
        } else {
            for w in &self.warnings {
                writeln!(f, "warning: {w}")?;
            }
            Ok(())
        }
    }
}

pub fn validate_corpus(corpus: &AnswerCorpus) -> ValidationReport {
    let counts = corpus.counts();
    let mut empty_subsets = Vec::new();
    let mut warnings = Vec::new();
    for t in TraitId::ALL {
        for (slot, p) in [Polarity::High, Polarity::Low].into_iter().enumerate() {
            if counts[t.index()][slot] == 0 {
                empty_subsets.push((t, p));
                warnings.push(format!("trait {t} has empty {p} polarity"));
            }
        }
    }
    let first = counts[0][0];
    let balanced = counts.iter().flatten().all(|c| *c == first);
    if !balanced {
        warnings.push("subset sizes are unbalanced".to_string());
    }
    let mut seen = HashSet::new();
    let duplicates = corpus.entries.iter().filter(|a| !seen.insert(a.text.as_str())).count();
    if duplicates > 0 {
        warnings.push(format!("{duplicates} duplicate text(s)"));
    }
    ValidationReport { counts, empty_subsets, duplicates, balanced, warnings }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuestionSet {
    questions: Vec<Question>,
}

impl QuestionSet {
    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn for_trait(&self, trait_id: TraitId) -> impl Iterator<Item = &Question> {
        self.questions.iter().filter(move |q| q.trait_id == trait_id)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Deserialize)]
struct RawQuestion {
    #[serde(rename = "trait")]
    trait_label: String,
    id: String,
    text: String,
}

pub fn parse_questions(input: &str) -> Result<QuestionSet, CorpusError> {
    let mut questions = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuestion = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let trait_id = raw
            .trait_label
            .parse::<TraitId>()
            .map_err(|_| CorpusError::UnknownTrait { line: line_no, label: raw.trait_label.clone() })?;
        if raw.text.is_empty() {
            return Err(CorpusError::EmptyText { line: line_no });
        }
        if ids.insert(raw.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId { line: line_no, id: raw.id });
        }
        questions.push(Question { trait_id, id: raw.id, text: raw.text });
    }
    if questions.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(QuestionSet { questions })
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<QuestionSet, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    parse_questions(&text)
}
