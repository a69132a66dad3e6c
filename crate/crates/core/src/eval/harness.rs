//! Steering experiments: beta sweeps scored by token frequency or by a
//! judge, perplexity stability, and the M ablation.

use serde::{Deserialize, Serialize};

use super::likert::{likert_aggregate, parse_likert, AggregateError, LikertRecord};
use super::prompts::{render_answer_prompt, render_judge_prompt};
use super::stats::{pearson, CorrelationResult, StdConvention, Summary};
use crate::bridge::ProcessSource;
use crate::corpus::{AnswerCorpus, QuestionSet};
use crate::decoding::{
    generate, seeded_rng, DecodeError, DistributionSource, GenerateOptions, Generation, SourceError, SteeringConfig,
};
use crate::digest::sha256_of_parts;
use crate::lexicon::{build_lexicon, BuildOptions, Lexicon};
use crate::tokenizer::{tokenize, TokenId, Vocab};
use crate::toy_lm::{LmError, NGramModel};
use crate::traits::{TraitId, TraitVector};

/// Judge parse failures at or above this fraction abort an evaluation.
pub const MAX_PARSE_FAILURE_RATE: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("generation failed for prompt {prompt}: {source}")]
    Source {
        prompt: String,
        #[source]
        source: SourceError,
    },
    #[error(transparent)]
    Perplexity(#[from] LmError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("no prompts to evaluate")]
    NoPrompts,
    #[error("empty beta grid")]
    EmptyGrid,
    #[error("no scorable generations at beta {0}")]
    NoScores(f64),
    #[error("{failures} of {total} judge replies could not be parsed")]
    TooManyParseFailures { failures: usize, total: usize },
}

/// A tokenized prompt with a stable id; the id seeds its random streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

impl Prompt {
    pub fn new(id: impl Into<String>, tokens: Vec<TokenId>) -> Prompt {
        Prompt { id: id.into(), tokens }
    }

    pub fn from_text(id: impl Into<String>, text: &str, vocab: &Vocab) -> Prompt {
        Prompt { id: id.into(), tokens: tokenize(vocab, text).ids }
    }
}

/// Everything that stays fixed across the points of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    /// Alpha, top-p and temperature; beta is set per point.
    pub base: SteeringConfig,
    pub generations_per_prompt: usize,
    pub max_tokens: usize,
    pub stop_token: Option<TokenId>,
    pub seed: u64,
    pub std: StdConvention,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            base: SteeringConfig::default(),
            generations_per_prompt: 1,
            max_tokens: 32,
            stop_token: None,
            seed: 0,
            std: StdConvention::Sample,
        }
    }
}

/// The random stream for run `run` of prompt `prompt_id`. Depends only on
/// the id, so reordering prompts never changes any sample.
pub fn stream_for(prompt_id: &str, run: usize) -> u64 {
    let run = run.to_string();
    let hex = sha256_of_parts([prompt_id, run.as_str()]);
    u64::from_str_radix(&hex[..16], 16).expect("hex digest")
}

/// Runs every prompt `generations_per_prompt` times under `cfg`, calling
/// `visit` on each continuation. The streams are the same for every `cfg`.
pub fn run_point<S, F>(
    source: &mut S,
    lexicon: Option<&Lexicon>,
    cfg: &SteeringConfig,
    prompts: &[Prompt],
    settings: &SweepSettings,
    mut visit: F,
) -> Result<(), EvalError>
where
    S: DistributionSource + ?Sized,
    F: FnMut(&Prompt, &Generation) -> Result<(), EvalError>,
{
    let opts = GenerateOptions { max_tokens: settings.max_tokens, stop_token: settings.stop_token };
    for prompt in prompts {
        for run in 0..settings.generations_per_prompt {
            let mut rng = seeded_rng(settings.seed, stream_for(&prompt.id, run));
            let generation = generate(source, lexicon, cfg, &prompt.tokens, &opts, &mut rng)?;
            if let Some(source) = generation.error.clone() {
                return Err(EvalError::Source { prompt: prompt.id.clone(), source });
            }
            visit(prompt, &generation)?;
        }
    }
    Ok(())
}

/// Membership of each token in each trait's high set (positive lexicon
/// value).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyProxy {
    high: [Vec<bool>; 5],
}

impl FrequencyProxy {
    pub fn from_lexicon(lexicon: &Lexicon) -> FrequencyProxy {
        let sets = TraitId::ALL.map(|t| lexicon.high_tokens(t));
        FrequencyProxy::from_sets(lexicon.vocab_size(), &sets)
    }

    pub fn from_sets(vocab_size: usize, sets: &[Vec<TokenId>; 5]) -> FrequencyProxy {
        let high = std::array::from_fn(|i| {
            let mut member = vec![false; vocab_size];
            for &id in &sets[i] {
                if let Some(m) = member.get_mut(id as usize) {
                    *m = true;
                }
            }
            member
        });
        FrequencyProxy { high }
    }

    pub fn hits(&self, trait_id: TraitId, tokens: &[TokenId]) -> usize {
        let set = &self.high[trait_id.index()];
        tokens.iter().filter(|&&id| set.get(id as usize).copied().unwrap_or(false)).count()
    }

    /// Fraction of `tokens` in the trait's high set; `None` when empty.
    pub fn rate(&self, trait_id: TraitId, tokens: &[TokenId]) -> Option<f64> {
        if tokens.is_empty() {
            None
        } else {
            Some(self.hits(trait_id, tokens) as f64 / tokens.len() as f64)
        }
    }
}

/// One trait's scores across a beta grid, with the beta/score correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub betas: Vec<f64>,
    pub cells: Vec<Summary>,
    pub correlation: Option<CorrelationResult>,
    /// Why `correlation` is missing, e.g. "zero variance".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation_error: Option<String>,
    /// Generations left out of the cells (empty continuations, unparsable
    /// judge replies).
    pub skipped: usize,
}

impl SweepRow {
    fn new(trait_id: TraitId, betas: &[f64], cells: Vec<Summary>, skipped: usize) -> SweepRow {
        let means: Vec<f64> = cells.iter().map(|c| c.mean).collect();
        let (correlation, correlation_error) = match pearson(betas, &means) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        SweepRow { trait_id, betas: betas.to_vec(), cells, correlation, correlation_error, skipped }
    }
}

/// Frequency-proxy beta sweep for one trait: at each beta (other traits at
/// zero) the score of a generation is its rate of high-trait tokens.
pub fn proxy_sweep<S>(
    source: &mut S,
    lexicon: &Lexicon,
    trait_id: TraitId,
    betas: &[f64],
    prompts: &[Prompt],
    settings: &SweepSettings,
) -> Result<SweepRow, EvalError>
where
    S: DistributionSource + ?Sized,
{
    check_grid(betas, prompts)?;
    let proxy = FrequencyProxy::from_lexicon(lexicon);
    let mut cells = Vec::with_capacity(betas.len());
    let mut skipped = 0;
    for &beta in betas {
        let cfg = settings.base.with_beta(TraitVector::single(trait_id, beta));
        let mut scores = Vec::new();
        run_point(source, Some(lexicon), &cfg, prompts, settings, |_, g| {
            match proxy.rate(trait_id, &g.tokens) {
                Some(r) => scores.push(r),
                None => skipped += 1,
            }
            Ok(())
        })?;
        cells.push(Summary::of(&scores, settings.std).ok_or(EvalError::NoScores(beta))?);
    }
    Ok(SweepRow::new(trait_id, betas, cells, skipped))
}

/// Pooled high-token counts for every trait under one beta vector:
/// `(hits per trait, total tokens)`.
pub fn proxy_counts<S>(
    source: &mut S,
    lexicon: &Lexicon,
    proxy: &FrequencyProxy,
    beta: TraitVector,
    prompts: &[Prompt],
    settings: &SweepSettings,
) -> Result<([u64; 5], u64), EvalError>
where
    S: DistributionSource + ?Sized,
{
    let cfg = settings.base.with_beta(beta);
    let mut hits = [0u64; 5];
    let mut total = 0u64;
    run_point(source, Some(lexicon), &cfg, prompts, settings, |_, g| {
        for t in TraitId::ALL {
            hits[t.index()] += proxy.hits(t, &g.tokens) as u64;
        }
        total += g.tokens.len() as u64;
        Ok(())
    })?;
    Ok((hits, total))
}

/// A text-in, text-out scorer.
pub trait Judge {
    /// Tag stored in each [`LikertRecord`].
    fn id(&self) -> &str;

    fn judge(&mut self, prompt: &str) -> Result<String, SourceError>;
}

/// A judge behind the stdio bridge.
pub struct ProcessJudge {
    id: String,
    process: ProcessSource,
}

impl ProcessJudge {
    pub fn new(id: impl Into<String>, process: ProcessSource) -> ProcessJudge {
        ProcessJudge { id: id.into(), process }
    }
}

impl Judge for ProcessJudge {
    fn id(&self) -> &str {
        &self.id
    }

    fn judge(&mut self, prompt: &str) -> Result<String, SourceError> {
        self.process.complete(prompt)
    }
}

/// Judge-scored beta sweep over the questions of each trait in `traits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub rows: Vec<SweepRow>,
    pub records: Vec<LikertRecord>,
    pub parse_failures: usize,
    /// Replies requested from the judge.
    pub total: usize,
    /// Empty continuations, skipped without asking the judge.
    pub empty_answers: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn judge_sweep<S, J>(
    source: &mut S,
    lexicon: &Lexicon,
    vocab: &Vocab,
    questions: &QuestionSet,
    traits: &[TraitId],
    betas: &[f64],
    settings: &SweepSettings,
    judge: &mut J,
) -> Result<JudgeOutcome, EvalError>
where
    S: DistributionSource + ?Sized,
    J: Judge + ?Sized,
{
    if questions.is_empty() {
        return Err(EvalError::NoPrompts);
    }
    if betas.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut records = Vec::new();
    let mut parse_failures = 0;
    let mut total = 0;
    let mut empty_answers = 0;
    let mut failures_per_trait = [0usize; 5];
    for &trait_id in traits {
        let asked: Vec<_> = questions.for_trait(trait_id).collect();
        let mut prompts = Vec::with_capacity(asked.len());
        for q in &asked {
            let text = render_answer_prompt(&q.text).expect("questions are non-empty");
            prompts.push(Prompt::from_text(q.id.clone(), &text, vocab));
        }
        for &beta in betas {
            let cfg = settings.base.with_beta(TraitVector::single(trait_id, beta));
            run_point(source, Some(lexicon), &cfg, &prompts, settings, |prompt, g| {
                let question = asked.iter().find(|q| q.id == prompt.id).expect("prompt ids come from questions");
                let answer = vocab.decode(&g.tokens);
                let Ok(judge_prompt) = render_judge_prompt(&question.text, &answer, trait_id) else {
                    empty_answers += 1;
                    failures_per_trait[trait_id.index()] += 1;
                    return Ok(());
                };
                total += 1;
                let reply = judge
                    .judge(&judge_prompt)
                    .map_err(|source| EvalError::Source { prompt: prompt.id.clone(), source })?;
                match parse_likert(&reply).ok() {
                    Some(score) => records.push(LikertRecord {
                        trait_id,
                        question_id: prompt.id.clone(),
                        beta,
                        score,
                        rater: judge.id().to_string(),
                    }),
                    None => {
                        parse_failures += 1;
                        failures_per_trait[trait_id.index()] += 1;
                    }
                }
                Ok(())
            })?;
        }
    }
    if total == 0 && empty_answers == 0 {
        return Err(EvalError::NoPrompts);
    }
    if parse_failures > 0 && parse_failures as f64 >= MAX_PARSE_FAILURE_RATE * total as f64 {
        return Err(EvalError::TooManyParseFailures { failures: parse_failures, total });
    }
    let cells = likert_aggregate(&records, settings.std)?;
    let mut rows = Vec::new();
    for &trait_id in traits {
        let mut row_cells = Vec::with_capacity(betas.len());
        for &beta in betas {
            let cell = cells
                .iter()
                .find(|c| c.trait_id == trait_id && c.beta.to_bits() == beta.to_bits())
                .ok_or(EvalError::NoScores(beta))?;
            row_cells.push(cell.summary);
        }
        rows.push(SweepRow::new(trait_id, betas, row_cells, failures_per_trait[trait_id.index()]));
    }
    Ok(JudgeOutcome { rows, records, parse_failures, total, empty_answers })
}

/// Perplexity of steered continuations per beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplTable {
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub betas: Vec<f64>,
    pub cells: Vec<Summary>,
    /// Unsteered reference (beta = 0).
    pub baseline: Summary,
    /// `max |mean(beta) - mean(0)| / mean(0)` over the grid.
    pub max_relative_deviation: f64,
    pub skipped: usize,
}

/// Generates with `model` at each beta on `trait_id` and scores every
/// continuation's perplexity under the same model, conditioned on its
/// prompt.
pub fn ppl_stability(
    model: &NGramModel,
    lexicon: &Lexicon,
    trait_id: TraitId,
    betas: &[f64],
    prompts: &[Prompt],
    settings: &SweepSettings,
) -> Result<PplTable, EvalError> {
    check_grid(betas, prompts)?;
    let mut source = model.clone();
    let mut point = |beta: f64, skipped: &mut usize| -> Result<Summary, EvalError> {
        let cfg = settings.base.with_beta(TraitVector::single(trait_id, beta));
        let mut scores = Vec::new();
        run_point(&mut source, Some(lexicon), &cfg, prompts, settings, |p, g| {
            if g.tokens.is_empty() {
                *skipped += 1;
            } else {
                scores.push(model.perplexity_ids(&p.tokens, &g.tokens)?);
            }
            Ok(())
        })?;
        Summary::of(&scores, settings.std).ok_or(EvalError::NoScores(beta))
    };
    let mut skipped = 0;
    let mut cells = Vec::with_capacity(betas.len());
    for &beta in betas {
        cells.push(point(beta, &mut skipped)?);
    }
    let baseline = match betas.iter().position(|&b| b == 0.0) {
        Some(i) => cells[i],
        None => point(0.0, &mut 0)?,
    };
    let max_relative_deviation = cells
        .iter()
        .map(|c| (c.mean - baseline.mean).abs() / baseline.mean)
        .fold(0.0, f64::max);
    Ok(PplTable { trait_id, betas: betas.to_vec(), cells, baseline, max_relative_deviation, skipped })
}

/// What `sweep_m` runs for each rebuilt lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringFixture {
    pub trait_id: TraitId,
    pub beta: TraitVector,
    pub prompts: Vec<Prompt>,
    pub settings: SweepSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MSweepRow {
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Rebuilds the lexicon at each M and records the fixture trait's
/// high-token rate under the fixture's beta. Build failures are recorded
/// and the sweep moves on.
pub fn sweep_m<S>(
    source: &mut S,
    corpus: &AnswerCorpus,
    vocab: &Vocab,
    m_grid: &[f64],
    epsilon: f64,
    fixture: &SteeringFixture,
) -> Result<Vec<MSweepRow>, EvalError>
where
    S: DistributionSource + ?Sized,
{
    if m_grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if fixture.prompts.is_empty() {
        return Err(EvalError::NoPrompts);
    }
    let mut rows = Vec::with_capacity(m_grid.len());
    for &m in m_grid {
        let opts = BuildOptions { epsilon, ..BuildOptions::with_m(m) };
        let lexicon = match build_lexicon(corpus, vocab, &opts) {
            Ok(l) => l,
            Err(e) => {
                rows.push(MSweepRow { m, metric: None, error: Some(e.to_string()) });
                continue;
            }
        };
        let proxy = FrequencyProxy::from_lexicon(&lexicon);
        let cfg = fixture.settings.base.with_beta(fixture.beta);
        let mut scores = Vec::new();
        run_point(source, Some(&lexicon), &cfg, &fixture.prompts, &fixture.settings, |_, g| {
            if let Some(r) = proxy.rate(fixture.trait_id, &g.tokens) {
                scores.push(r);
            }
            Ok(())
        })?;
        let row = match Summary::of(&scores, fixture.settings.std) {
            Some(s) => MSweepRow { m, metric: Some(s), error: None },
            None => MSweepRow { m, metric: None, error: Some("no scorable generations".into()) },
        };
        rows.push(row);
    }
    Ok(rows)
}

fn check_grid(betas: &[f64], prompts: &[Prompt]) -> Result<(), EvalError> {
    if betas.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if prompts.is_empty() {
        return Err(EvalError::NoPrompts);
    }
    Ok(())
}

fn beta_header(betas: &[f64]) -> Vec<String> {
    betas.iter().map(|b| format!("b={b:+.2}")).collect()
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().enumerate().map(|(i, s)| format!("{s:<w$}", w = widths[i])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Plain-text table: one row per trait, `mean(std)` per beta, then R and P.
pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut table = vec![std::iter::once("trait".to_string())
        .chain(beta_header(&first.betas))
        .chain(["R".to_string(), "P".to_string()])
        .collect::<Vec<_>>()];
    for row in rows {
        let mut line = vec![row.trait_id.code().to_string()];
        line.extend(row.cells.iter().map(Summary::cell));
        match &row.correlation {
            Some(c) => {
                line.push(format!("{:.3}", c.r));
                line.push(format!("{:.1e}", c.p));
            }
            None => {
                line.push("-".into());
                line.push("-".into());
            }
        }
        table.push(line);
    }
    align(&table)
}

/// Plain-text table: `mean(std)` perplexity per beta.
pub fn render_ppl_table(table: &PplTable) -> String {
    let header = std::iter::once("trait".to_string()).chain(beta_header(&table.betas)).collect();
    let mut line = vec![table.trait_id.code().to_string()];
    line.extend(table.cells.iter().map(Summary::cell));
    let mut out = align(&[header, line]);
    out.push_str(&format!("max relative deviation from b=0: {:.4}\n", table.max_relative_deviation));
    out
}

/// Plain-text table: one line per M.
pub fn render_m_table(rows: &[MSweepRow]) -> String {
    let mut table = vec![vec!["M".to_string(), "metric".to_string()]];
    for row in rows {
        let cell = match (&row.metric, &row.error) {
            (Some(s), _) => s.cell(),
            (None, Some(e)) => format!("error: {e}"),
            (None, None) => "-".into(),
        };
        table.push(vec![format!("{}", row.m), cell]);
    }
    align(&table)
}

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("report types serialize"));
        out.push('\n');
    }
    out
}
