//! Prompt templates for answering questions and for judging answers.

use crate::traits::TraitId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0} must not be empty")]
pub struct PromptError(pub &'static str);

const ANSWER_TEMPLATE: &str = "\
Read the situation below and describe what you would do and why.
Answer in the first person, in a few sentences.

Situation: {question}
Answer:";

const JUDGE_TEMPLATE: &str = "\
You are rating how strongly a response expresses one personality trait.

Trait: {trait_name}
{trait_block}

Situation: {question}
Response: {answer}

Rate the response on a scale from 1 (very low {trait_name}) to 5 (very high {trait_name}).
Reply with a single line of the form \"Score: <number>\".";

/// High- and low-end descriptions shown to the judge.
pub fn trait_description(trait_id: TraitId) -> (&'static str, &'static str) {
    match trait_id {
        TraitId::Openness => (
            "curious, imaginative, drawn to new ideas, art and unfamiliar experiences",
            "conventional, practical, prefers the familiar and concrete",
        ),
        TraitId::Conscientiousness => (
            "organized, careful, dependable, plans ahead and follows through",
            "spontaneous, careless with details, leaves tasks unfinished",
        ),
        TraitId::Extraversion => (
            "outgoing, talkative, energized by other people and group activity",
            "reserved, quiet, prefers solitude or small groups",
        ),
        TraitId::Agreeableness => (
            "warm, cooperative, trusting, considerate of others",
            "critical, competitive, skeptical of others' motives",
        ),
        TraitId::Neuroticism => (
            "anxious, easily stressed, prone to worry and mood swings",
            "calm, emotionally stable, rarely upset",
        ),
    }
}

fn trait_block(trait_id: TraitId) -> String {
    let (high, low) = trait_description(trait_id);
    format!("High {}: {high}.\nLow {}: {low}.", trait_id.name(), trait_id.name())
}

// Single pass, so substituted text is never rescanned for placeholders.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        }) {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// The prompt asking a model to answer one situational question.
pub fn render_answer_prompt(question: &str) -> Result<String, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError("question"));
    }
    Ok(fill(ANSWER_TEMPLATE, &[("question", question)]))
}

/// The prompt asking a judge for a 1..5 score of `answer` on `trait_id`.
pub fn render_judge_prompt(question: &str, answer: &str, trait_id: TraitId) -> Result<String, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError("question"));
    }
    if answer.trim().is_empty() {
        return Err(PromptError("answer"));
    }
    let block = trait_block(trait_id);
    Ok(fill(
        JUDGE_TEMPLATE,
        &[
            ("trait_name", trait_id.name()),
            ("trait_block", &block),
            ("question", question),
            ("answer", answer),
        ],
    ))
}
