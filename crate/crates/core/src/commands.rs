//! Reproducible runs: each command takes a serializable config, writes its
//! outputs, and records a manifest (config, seed, input and output
//! digests) from which [`replay`] can re-run it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bridge::ProcessSource;
use crate::corpus::{load_corpus, load_questions, validate_corpus, QuestionSet};
use crate::decoding::{generate, seeded_rng, DistributionSource, GenerateOptions, SteeringConfig};
use crate::digest::sha256_hex;
use crate::eval::{
    judge_sweep, ppl_stability, proxy_sweep, render_m_table, render_ppl_table, render_sweep_table, stream_for,
    sweep_m, to_jsonl, Judge, ProcessJudge, Prompt, SteeringFixture, StdConvention, SweepSettings,
};
use crate::lexicon::{build_with_report, iterate_assignment, BuildOptions, Lexicon, ZeroConvention};
use crate::tokenizer::{load_vocab, tokenize, Vocab};
use crate::toy_lm::{train_ngram, NGramModel};
use crate::traits::{TraitId, TraitVector};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
}

fn input_err(e: impl std::fmt::Display) -> CommandError {
    CommandError::Input(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> CommandError {
    CommandError::Run(e.to_string())
}

/// Where next-token logits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// A trained n-gram model file.
    Toy { model: PathBuf },
    /// A child process speaking the stdio bridge protocol.
    Process { program: String, args: Vec<String> },
}

impl SourceSpec {
    fn input_files(&self) -> Vec<(String, PathBuf)> {
        match self {
            SourceSpec::Toy { model } => vec![("model".into(), model.clone())],
            SourceSpec::Process { .. } => Vec::new(),
        }
    }

    fn open(&self, vocab: &Vocab) -> Result<Box<dyn DistributionSource>, CommandError> {
        let source: Box<dyn DistributionSource> = match self {
            SourceSpec::Toy { model } => Box::new(NGramModel::load(model).map_err(input_err)?),
            SourceSpec::Process { program, args } => Box::new(ProcessSource::spawn(program, args).map_err(input_err)?),
        };
        if source.vocab_fingerprint() != vocab.fingerprint() {
            return Err(CommandError::Input(format!(
                "source vocabulary fingerprint {} does not match the vocabulary file ({})",
                source.vocab_fingerprint(),
                vocab.fingerprint()
            )));
        }
        Ok(source)
    }
}

/// An external judge reached over the stdio bridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSpec {
    pub id: String,
    pub program: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLexiconConfig {
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub out: PathBuf,
    #[serde(rename = "M")]
    pub m: TraitVector,
    pub epsilon: f64,
    pub zero_convention: ZeroConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub vocab: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub source: SourceSpec,
    /// One prompt per line.
    pub prompts: PathBuf,
    /// `None` writes to standard output.
    pub out: Option<PathBuf>,
    pub steering: SteeringConfig,
    pub max_tokens: usize,
    pub seed: u64,
    pub stop_at_eos: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLmConfig {
    pub vocab: PathBuf,
    /// One training text per line; blank lines are ignored.
    pub texts: PathBuf,
    pub order: usize,
    pub delta: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub vocab: PathBuf,
    pub lexicon: PathBuf,
    pub source: SourceSpec,
    pub questions: PathBuf,
    pub traits: Vec<TraitId>,
    pub betas: Vec<f64>,
    pub steering: SteeringConfig,
    pub generations_per_question: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub stop_at_eos: bool,
    pub std: StdConvention,
    /// `None` scores by high-trait token frequency.
    pub judge: Option<JudgeSpec>,
    /// Also report perplexity per beta (toy sources only).
    pub ppl: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMConfig {
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub source: SourceSpec,
    pub questions: PathBuf,
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub m_grid: Vec<f64>,
    pub epsilon: f64,
    pub steering: SteeringConfig,
    pub generations_per_question: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub stop_at_eos: bool,
    /// `.csv` writes CSV, anything else JSON lines.
    pub out: PathBuf,
}

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    BuildLexicon(BuildLexiconConfig),
    Generate(GenerateConfig),
    TrainLm(TrainLmConfig),
    Eval(EvalConfig),
    SweepM(SweepMConfig),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::BuildLexicon(_) => "build-lexicon",
            RunConfig::Generate(_) => "generate",
            RunConfig::TrainLm(_) => "train-lm",
            RunConfig::Eval(_) => "eval",
            RunConfig::SweepM(_) => "sweep-m",
        }
    }

    /// The primary output path, if the command writes files.
    pub fn out(&self) -> Option<&Path> {
        match self {
            RunConfig::BuildLexicon(c) => Some(&c.out),
            RunConfig::Generate(c) => c.out.as_deref(),
            RunConfig::TrainLm(c) => Some(&c.out),
            RunConfig::Eval(c) => Some(&c.out),
            RunConfig::SweepM(c) => Some(&c.out),
        }
    }

    /// Redirects every output to `out` (and files derived from it).
    pub fn retarget(&mut self, out: PathBuf) {
        match self {
            RunConfig::BuildLexicon(c) => c.out = out,
            RunConfig::Generate(c) => c.out = Some(out),
            RunConfig::TrainLm(c) => c.out = out,
            RunConfig::Eval(c) => c.out = out,
            RunConfig::SweepM(c) => c.out = out,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::Generate(c) => Some(c.seed),
            RunConfig::Eval(c) => Some(c.seed),
            RunConfig::SweepM(c) => Some(c.seed),
            RunConfig::BuildLexicon(_) | RunConfig::TrainLm(_) => None,
        }
    }

    fn input_files(&self) -> Vec<(String, PathBuf)> {
        let mut files: Vec<(String, PathBuf)> = Vec::new();
        match self {
            RunConfig::BuildLexicon(c) => {
                files.push(("corpus".into(), c.corpus.clone()));
                files.push(("vocab".into(), c.vocab.clone()));
            }
            RunConfig::Generate(c) => {
                files.push(("vocab".into(), c.vocab.clone()));
                if let Some(l) = &c.lexicon {
                    files.push(("lexicon".into(), l.clone()));
                }
                files.push(("prompts".into(), c.prompts.clone()));
                files.extend(c.source.input_files());
            }
            RunConfig::TrainLm(c) => {
                files.push(("vocab".into(), c.vocab.clone()));
                files.push(("texts".into(), c.texts.clone()));
            }
            RunConfig::Eval(c) => {
                files.push(("vocab".into(), c.vocab.clone()));
                files.push(("lexicon".into(), c.lexicon.clone()));
                files.push(("questions".into(), c.questions.clone()));
                files.extend(c.source.input_files());
            }
            RunConfig::SweepM(c) => {
                files.push(("corpus".into(), c.corpus.clone()));
                files.push(("vocab".into(), c.vocab.clone()));
                files.push(("questions".into(), c.questions.clone()));
                files.extend(c.source.input_files());
            }
        }
        files
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    /// Files written, by role.
    pub outputs: Vec<(String, PathBuf)>,
    /// Text for standard output.
    pub stdout: String,
    /// Text for standard error.
    pub stderr: String,
    /// 0, or 2 when the algorithm did not converge.
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub seed: Option<u64>,
    /// How per-prompt random streams derive from the seed.
    pub stream_rule: String,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, String>,
    pub exit_code: i32,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, CommandError> {
        let text = fs::read_to_string(path).map_err(|e| CommandError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CommandError::Input(format!("{}: {e}", path.display())))
    }
}

/// The manifest path used when none is given: `<out>.manifest.json`.
pub fn default_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn digest_file(path: &Path) -> Result<String, CommandError> {
    let bytes = fs::read(path).map_err(|e| CommandError::Input(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CommandError> {
    fs::write(path, contents).map_err(|source| CommandError::Write { path: path.display().to_string(), source })
}

fn read_text(path: &Path) -> Result<String, CommandError> {
    fs::read_to_string(path).map_err(|e| CommandError::Input(format!("failed to read {}: {e}", path.display())))
}

/// Runs `config` and, when `manifest` is given, records a manifest there.
/// Inputs are digested before the run so the manifest reflects what was
/// actually read.
pub fn execute(config: &RunConfig, manifest: Option<&Path>) -> Result<RunOutcome, CommandError> {
    let mut inputs = BTreeMap::new();
    for (role, path) in config.input_files() {
        inputs.insert(role, FileDigest { sha256: digest_file(&path)?, path });
    }
    let outcome = run(config)?;
    if let Some(manifest_path) = manifest {
        let mut outputs = BTreeMap::new();
        for (role, path) in &outcome.outputs {
            outputs.insert(role.clone(), digest_file(path)?);
        }
        if config.out().is_none() {
            outputs.insert("stdout".into(), sha256_hex(outcome.stdout.as_bytes()));
        }
        let m = Manifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seed: config.seed(),
            stream_rule: "chacha8(seed) with stream = first 8 bytes of sha256(prompt id, run index)".into(),
            inputs,
            outputs,
            exit_code: outcome.exit_code,
        };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        write_file(manifest_path, &text)?;
    }
    Ok(outcome)
}

/// Per-output comparison from a replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub outcome: RunOutcome,
    /// `(role, recorded digest, replayed digest)`.
    pub compared: Vec<(String, String, String)>,
}

impl ReplayReport {
    pub fn all_match(&self) -> bool {
        self.compared.iter().all(|(_, a, b)| a == b)
    }
}

/// Re-runs the command recorded in `manifest`, optionally writing to
/// `out` instead of the recorded paths, and compares output digests.
/// Fails before running if an input file changed.
pub fn replay(manifest: &Manifest, out: Option<PathBuf>) -> Result<ReplayReport, CommandError> {
    for (role, input) in &manifest.inputs {
        let now = digest_file(&input.path)?;
        if now != input.sha256 {
            return Err(CommandError::Replay(format!("input {role} ({}) changed since the recorded run", input.path.display())));
        }
    }
    let mut config = manifest.config.clone();
    if let Some(out) = out {
        config.retarget(out);
    }
    let outcome = run(&config)?;
    let mut replayed: BTreeMap<String, String> = BTreeMap::new();
    for (role, path) in &outcome.outputs {
        replayed.insert(role.clone(), digest_file(path)?);
    }
    if config.out().is_none() {
        replayed.insert("stdout".into(), sha256_hex(outcome.stdout.as_bytes()));
    } else if let Some(file) = replayed.get("output").cloned() {
        // A run recorded on standard output and replayed into a file.
        replayed.entry("stdout".into()).or_insert(file);
    }
    let mut compared = Vec::new();
    for (role, recorded) in &manifest.outputs {
        let now = replayed.get(role).cloned().unwrap_or_default();
        compared.push((role.clone(), recorded.clone(), now));
    }
    Ok(ReplayReport { outcome, compared })
}

/// Runs a command without writing a manifest.
pub fn run(config: &RunConfig) -> Result<RunOutcome, CommandError> {
    match config {
        RunConfig::BuildLexicon(c) => run_build_lexicon(c),
        RunConfig::Generate(c) => run_generate(c),
        RunConfig::TrainLm(c) => run_train_lm(c),
        RunConfig::Eval(c) => run_eval(c),
        RunConfig::SweepM(c) => run_sweep_m(c),
    }
}

fn run_build_lexicon(c: &BuildLexiconConfig) -> Result<RunOutcome, CommandError> {
    let corpus = load_corpus(&c.corpus).map_err(input_err)?;
    let vocab = load_vocab(&c.vocab).map_err(input_err)?;
    let opts = BuildOptions { targets: c.m, epsilon: c.epsilon, zero_convention: c.zero_convention };
    if c.m.0.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(CommandError::Usage(format!("M must be positive, got {:?}", c.m.0)));
    }
    let mut outcome = RunOutcome::default();
    let validation = validate_corpus(&corpus);
    for w in &validation.warnings {
        writeln!(outcome.stderr, "warning: {w}").unwrap();
    }
    let raw = iterate_assignment(&corpus, &vocab);
    let (lexicon, report) = build_with_report(&raw, &opts, Some(corpus.digest()));

    let report_path = sibling(&c.out, ".report.json");
    let mut report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    report_json.push('\n');
    write_file(&report_path, &report_json)?;

    writeln!(outcome.stdout, "trait  N           S           res+       res-       nonzero  converged").unwrap();
    for t in &report.traits {
        let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        let nonzero = raw.column(t.trait_id).iter().filter(|v| **v != 0).count();
        writeln!(
            outcome.stdout,
            "{:<5}  {:<10}  {:<10}  {:<9}  {:<9}  {:<7}  {}",
            t.trait_id.code(),
            fmt(t.n, 4),
            fmt(t.s, 6),
            fmt(t.residual_pos, 6),
            fmt(t.residual_neg, 6),
            nonzero,
            t.converged
        )
        .unwrap();
        if let Some(e) = &t.error {
            writeln!(outcome.stderr, "error: trait {}: {e}", t.trait_id.code()).unwrap();
        }
    }
    if raw.skipped_chars > 0 {
        writeln!(outcome.stderr, "warning: {} corpus characters not covered by the vocabulary", raw.skipped_chars).unwrap();
    }
    match lexicon {
        Some(lex) => {
            lex.save(&c.out).map_err(|e| CommandError::Write { path: c.out.display().to_string(), source: std::io::Error::other(e.to_string()) })?;
            outcome.outputs.push(("lexicon".into(), c.out.clone()));
        }
        None => outcome.exit_code = 2,
    }
    outcome.outputs.push(("report".into(), report_path));
    Ok(outcome)
}

fn escape_line(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn load_lexicon_for(path: &Path, vocab: &Vocab) -> Result<Lexicon, CommandError> {
    let lexicon = Lexicon::load(path).map_err(input_err)?;
    if lexicon.vocab_fingerprint() != vocab.fingerprint() {
        return Err(CommandError::Input(format!(
            "lexicon {} was built for vocabulary {}, not {}",
            path.display(),
            lexicon.vocab_fingerprint(),
            vocab.fingerprint()
        )));
    }
    Ok(lexicon)
}

fn run_generate(c: &GenerateConfig) -> Result<RunOutcome, CommandError> {
    c.steering.validate().map_err(|e| CommandError::Usage(e.to_string()))?;
    let vocab = load_vocab(&c.vocab).map_err(input_err)?;
    let lexicon = c.lexicon.as_deref().map(|p| load_lexicon_for(p, &vocab)).transpose()?;
    let prompts = read_text(&c.prompts)?;
    let mut source = c.source.open(&vocab)?;
    let opts = GenerateOptions { max_tokens: c.max_tokens, stop_token: c.stop_at_eos.then(|| vocab.eos()) };
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut text = String::new();
    let mut outcome = RunOutcome::default();
    for line in prompts.lines() {
        let occurrence = seen.entry(line).or_insert(0);
        let mut rng = seeded_rng(c.seed, stream_for(line, *occurrence));
        *occurrence += 1;
        let ids = tokenize(&vocab, line).ids;
        let generation = generate(&mut *source, lexicon.as_ref(), &c.steering, &ids, &opts, &mut rng).map_err(run_err)?;
        if let Some(e) = &generation.error {
            writeln!(outcome.stderr, "error: source failed mid-generation: {e}").unwrap();
            outcome.exit_code = 1;
        }
        text.push_str(&escape_line(&vocab.decode(&generation.tokens)));
        text.push('\n');
        if generation.error.is_some() {
            break;
        }
    }
    match &c.out {
        Some(path) => {
            write_file(path, &text)?;
            outcome.outputs.push(("output".into(), path.clone()));
        }
        None => outcome.stdout = text,
    }
    Ok(outcome)
}

fn run_train_lm(c: &TrainLmConfig) -> Result<RunOutcome, CommandError> {
    let vocab = load_vocab(&c.vocab).map_err(input_err)?;
    let texts = read_text(&c.texts)?;
    let lines: Vec<&str> = texts.lines().filter(|l| !l.trim().is_empty()).collect();
    let model = train_ngram(&lines, &vocab, c.order, c.delta).map_err(input_err)?;
    model.save(&c.out).map_err(|e| CommandError::Write { path: c.out.display().to_string(), source: std::io::Error::other(e.to_string()) })?;
    let mut outcome = RunOutcome::default();
    writeln!(outcome.stdout, "trained order-{} model on {} texts", c.order, lines.len()).unwrap();
    outcome.outputs.push(("model".into(), c.out.clone()));
    Ok(outcome)
}

fn sweep_settings(steering: &SteeringConfig, runs: usize, max_tokens: usize, seed: u64, stop: Option<u32>, std: StdConvention) -> SweepSettings {
    SweepSettings { base: *steering, generations_per_prompt: runs, max_tokens, stop_token: stop, seed, std }
}

fn question_prompts(questions: &QuestionSet, trait_id: TraitId, vocab: &Vocab) -> Vec<Prompt> {
    questions.for_trait(trait_id).map(|q| Prompt::from_text(q.id.clone(), &q.text, vocab)).collect()
}

fn check_grid(values: &[f64], what: &str) -> Result<(), CommandError> {
    if values.is_empty() {
        return Err(CommandError::Usage(format!("empty {what}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CommandError::Usage(format!("non-finite value in {what}")));
    }
    Ok(())
}

fn run_eval(c: &EvalConfig) -> Result<RunOutcome, CommandError> {
    check_grid(&c.betas, "beta grid")?;
    c.steering.validate().map_err(|e| CommandError::Usage(e.to_string()))?;
    if c.ppl && !matches!(c.source, SourceSpec::Toy { .. }) {
        return Err(CommandError::Usage("perplexity reporting needs a toy model source".into()));
    }
    let vocab = load_vocab(&c.vocab).map_err(input_err)?;
    let lexicon = load_lexicon_for(&c.lexicon, &vocab)?;
    let questions = load_questions(&c.questions).map_err(input_err)?;
    let traits: Vec<TraitId> = if c.traits.is_empty() { TraitId::ALL.to_vec() } else { c.traits.clone() };
    let settings = sweep_settings(
        &c.steering,
        c.generations_per_question,
        c.max_tokens,
        c.seed,
        c.stop_at_eos.then(|| vocab.eos()),
        c.std,
    );
    let mut source = c.source.open(&vocab)?;
    let mut outcome = RunOutcome::default();
    let mut table = String::new();
    let mut jsonl = String::new();

    match &c.judge {
        None => {
            let mut rows = Vec::new();
            for &t in &traits {
                let prompts = question_prompts(&questions, t, &vocab);
                if prompts.is_empty() {
                    writeln!(outcome.stderr, "warning: no questions for trait {t}, skipped").unwrap();
                    continue;
                }
                rows.push(proxy_sweep(&mut *source, &lexicon, t, &c.betas, &prompts, &settings).map_err(run_err)?);
            }
            if rows.is_empty() {
                return Err(CommandError::Input("no questions for the requested traits".into()));
            }
            table.push_str("# high-trait token frequency\n");
            table.push_str(&render_sweep_table(&rows));
            jsonl.push_str(&to_jsonl(&rows));
        }
        Some(spec) => {
            let process = ProcessSource::spawn(&spec.program, &spec.args).map_err(input_err)?;
            let mut judge = ProcessJudge::new(spec.id.clone(), process);
            let judged = judge_sweep(&mut *source, &lexicon, &vocab, &questions, &traits, &c.betas, &settings, &mut judge)
                .map_err(run_err)?;
            if judged.empty_answers > 0 {
                writeln!(outcome.stderr, "warning: {} empty answers skipped", judged.empty_answers).unwrap();
            }
            if judged.parse_failures > 0 {
                writeln!(outcome.stderr, "warning: {} of {} judge replies unparsable", judged.parse_failures, judged.total).unwrap();
            }
            writeln!(table, "# judge {} likert scores", judge.id()).unwrap();
            table.push_str(&render_sweep_table(&judged.rows));
            jsonl.push_str(&to_jsonl(&judged.rows));
            let records_path = sibling(&c.out, ".records.jsonl");
            write_file(&records_path, &to_jsonl(&judged.records))?;
            outcome.outputs.push(("records".into(), records_path));
        }
    }

    if c.ppl {
        let SourceSpec::Toy { model } = &c.source else { unreachable!("checked above") };
        let model = NGramModel::load(model).map_err(input_err)?;
        for &t in &traits {
            let prompts = question_prompts(&questions, t, &vocab);
            if prompts.is_empty() {
                continue;
            }
            let ppl = ppl_stability(&model, &lexicon, t, &c.betas, &prompts, &settings).map_err(run_err)?;
            table.push_str("# perplexity\n");
            table.push_str(&render_ppl_table(&ppl));
            jsonl.push_str(&to_jsonl(std::slice::from_ref(&ppl)));
        }
    }

    write_file(&c.out, &table)?;
    let jsonl_path = sibling(&c.out, ".jsonl");
    write_file(&jsonl_path, &jsonl)?;
    outcome.stdout = table;
    outcome.outputs.push(("table".into(), c.out.clone()));
    outcome.outputs.push(("jsonl".into(), jsonl_path));
    Ok(outcome)
}

fn run_sweep_m(c: &SweepMConfig) -> Result<RunOutcome, CommandError> {
    check_grid(&c.m_grid, "M grid")?;
    if c.m_grid.iter().any(|m| *m <= 0.0) {
        return Err(CommandError::Usage("M grid values must be positive".into()));
    }
    c.steering.validate().map_err(|e| CommandError::Usage(e.to_string()))?;
    let corpus = load_corpus(&c.corpus).map_err(input_err)?;
    let vocab = load_vocab(&c.vocab).map_err(input_err)?;
    let questions = load_questions(&c.questions).map_err(input_err)?;
    let prompts = question_prompts(&questions, c.trait_id, &vocab);
    if prompts.is_empty() {
        return Err(CommandError::Input(format!("no questions for trait {}", c.trait_id)));
    }
    let settings = sweep_settings(
        &c.steering,
        c.generations_per_question,
        c.max_tokens,
        c.seed,
        c.stop_at_eos.then(|| vocab.eos()),
        StdConvention::Sample,
    );
    let fixture = SteeringFixture { trait_id: c.trait_id, beta: c.steering.beta, prompts, settings };
    let mut source = c.source.open(&vocab)?;
    let rows = sweep_m(&mut *source, &corpus, &vocab, &c.m_grid, c.epsilon, &fixture).map_err(run_err)?;

    let csv = c.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let body = if csv {
        let mut s = String::from("M,mean,std,count,error\n");
        for r in &rows {
            match (&r.metric, &r.error) {
                (Some(m), _) => writeln!(s, "{},{},{},{},", r.m, m.mean, m.std, m.count).unwrap(),
                (None, e) => writeln!(s, "{},,,,\"{}\"", r.m, e.clone().unwrap_or_default().replace('"', "\"\"")).unwrap(),
            }
        }
        s
    } else {
        to_jsonl(&rows)
    };
    write_file(&c.out, &body)?;
    let mut outcome = RunOutcome { stdout: render_m_table(&rows), ..RunOutcome::default() };
    for r in rows.iter().filter(|r| r.error.is_some()) {
        writeln!(outcome.stderr, "warning: M={}: {}", r.m, r.error.as_deref().unwrap_or_default()).unwrap();
    }
    outcome.outputs.push(("output".into(), c.out.clone()));
    Ok(outcome)
}
