//! Loads the fixture corpus, vocabulary, questions and toy model.

#![allow(dead_code)]

use std::path::PathBuf;

use lexsteer::corpus::{load_corpus, load_questions};
use lexsteer::eval::{Prompt, SweepSettings};
use lexsteer::lexicon::{build_lexicon, BuildOptions};
use lexsteer::tokenizer::load_vocab;
use lexsteer::toy_lm::{train_ngram, NGramModel};
use lexsteer::{AnswerCorpus, Lexicon, QuestionSet, TraitId, Vocab};

pub fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub struct Fixture {
    pub vocab: Vocab,
    pub corpus: AnswerCorpus,
    pub questions: QuestionSet,
    pub model: NGramModel,
    pub lexicon: Lexicon,
}

impl Fixture {
    pub fn load() -> Fixture {
        let vocab = load_vocab(path("vocab.txt")).unwrap();
        let corpus = load_corpus(path("corpus.jsonl")).unwrap();
        let questions = load_questions(path("questions.jsonl")).unwrap();
        let texts = std::fs::read_to_string(path("lm_texts.txt")).unwrap();
        let lines: Vec<&str> = texts.lines().collect();
        let model = train_ngram(&lines, &vocab, 2, 0.1).unwrap();
        let lexicon = build_lexicon(&corpus, &vocab, &BuildOptions::default()).unwrap();
        Fixture { vocab, corpus, questions, model, lexicon }
    }

    /// The trait's questions, as raw-text prompts.
    pub fn prompts(&self, trait_id: TraitId) -> Vec<Prompt> {
        self.questions
            .for_trait(trait_id)
            .map(|q| Prompt::from_text(q.id.clone(), &q.text, &self.vocab))
            .collect()
    }

    /// Steering defaults with `runs` generations per prompt, stopping at
    /// the end-of-sequence token.
    pub fn settings(&self, runs: usize) -> SweepSettings {
        SweepSettings {
            generations_per_prompt: runs,
            max_tokens: 32,
            stop_token: Some(self.vocab.eos()),
            seed: 0,
            ..SweepSettings::default()
        }
    }
}
