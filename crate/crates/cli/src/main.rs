//! `lexsteer`: build trait lexicons, steer generation, run evaluations.
//!
//! Every numeric flag can also come from an environment variable named
//! `LEXSTEER_<FLAG>` (for example `LEXSTEER_SEED`, `LEXSTEER_TOP_P`).
//! Exit codes: 0 success, 1 usage or I/O error, 2 solver non-convergence.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lexsteer::bridge::serve;
use lexsteer::commands::{
    default_manifest_path, execute, replay, BuildLexiconConfig, CommandError, EvalConfig, GenerateConfig, JudgeSpec,
    Manifest, RunConfig, SourceSpec, SweepMConfig, TrainLmConfig,
};
use lexsteer::corpus::{load_corpus, validate_corpus};
use lexsteer::eval::StdConvention;
use lexsteer::lexicon::{BuildOptions, ZeroConvention};
use lexsteer::toy_lm::NGramModel;
use lexsteer::{SteeringConfig, TraitId, TraitVector};

#[derive(Parser)]
#[command(name = "lexsteer", version, about = "Trait lexicons and decode-time personality steering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a lexicon from a labeled answer corpus.
    BuildLexicon(BuildArgs),
    /// Generate one continuation per prompt line.
    Generate(GenerateArgs),
    /// Train the toy n-gram model.
    TrainLm(TrainArgs),
    /// Sweep beta and report trait scores per point.
    Eval(EvalArgs),
    /// Rebuild the lexicon over a grid of M and measure steering.
    SweepM(SweepMArgs),
    /// Check a corpus for empty subsets, duplicates and imbalance.
    ValidateCorpus {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Serve a toy model over the stdio bridge protocol.
    Serve {
        #[arg(long)]
        model: PathBuf,
    },
    /// Re-run a command from its manifest and compare outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write outputs here instead of the recorded paths.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ManifestArg {
    /// Manifest location; defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Target magnitude: one value, or five comma-separated (OPE,CON,EXT,AGR,NEU).
    #[arg(long = "m", env = "LEXSTEER_M", default_value_t = BuildOptions::DEFAULT_M.to_string())]
    m: String,
    #[arg(long, env = "LEXSTEER_EPSILON", default_value_t = BuildOptions::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = ZeroArg::Exclude)]
    zero_convention: ZeroArg,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZeroArg {
    Exclude,
    CountInBoth,
}

#[derive(Clone, Copy, ValueEnum)]
enum StdArg {
    Sample,
    Population,
}

#[derive(Args)]
struct SourceArgs {
    /// Toy model file produced by `train-lm`.
    #[arg(long, conflicts_with = "source_cmd", required_unless_present = "source_cmd")]
    model: Option<PathBuf>,
    /// Program speaking the bridge protocol.
    #[arg(long)]
    source_cmd: Option<String>,
    /// Argument for `--source-cmd`; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    source_arg: Vec<String>,
}

impl SourceArgs {
    fn spec(&self) -> SourceSpec {
        match (&self.model, &self.source_cmd) {
            (Some(model), _) => SourceSpec::Toy { model: model.clone() },
            (None, Some(program)) => SourceSpec::Process { program: program.clone(), args: self.source_arg.clone() },
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Args)]
struct SteeringArgs {
    #[arg(long, env = "LEXSTEER_ALPHA", default_value_t = SteeringConfig::DEFAULT_ALPHA, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, env = "LEXSTEER_BETA_OPE", default_value_t = 0.0, allow_hyphen_values = true)]
    beta_ope: f64,
    #[arg(long, env = "LEXSTEER_BETA_CON", default_value_t = 0.0, allow_hyphen_values = true)]
    beta_con: f64,
    #[arg(long, env = "LEXSTEER_BETA_EXT", default_value_t = 0.0, allow_hyphen_values = true)]
    beta_ext: f64,
    #[arg(long, env = "LEXSTEER_BETA_AGR", default_value_t = 0.0, allow_hyphen_values = true)]
    beta_agr: f64,
    #[arg(long, env = "LEXSTEER_BETA_NEU", default_value_t = 0.0, allow_hyphen_values = true)]
    beta_neu: f64,
    #[arg(long, env = "LEXSTEER_TOP_P", default_value_t = SteeringConfig::DEFAULT_TOP_P)]
    top_p: f64,
    #[arg(long, env = "LEXSTEER_TEMPERATURE", default_value_t = SteeringConfig::DEFAULT_TEMPERATURE)]
    temperature: f64,
}

impl SteeringArgs {
    fn config(&self) -> SteeringConfig {
        SteeringConfig {
            alpha: self.alpha,
            beta: TraitVector([self.beta_ope, self.beta_con, self.beta_ext, self.beta_agr, self.beta_neu]),
            top_p: self.top_p,
            temperature: self.temperature,
        }
    }
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, env = "LEXSTEER_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "LEXSTEER_MAX_TOKENS", default_value_t = 32)]
    max_tokens: usize,
    /// Keep sampling past the end-of-sequence token.
    #[arg(long)]
    no_stop_at_eos: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, conflicts_with = "no_lexicon", required_unless_present = "no_lexicon")]
    lexicon: Option<PathBuf>,
    /// Sample from the source without any steering.
    #[arg(long)]
    no_lexicon: bool,
    #[command(flatten)]
    source: SourceArgs,
    /// One prompt per line.
    #[arg(long)]
    prompts: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    steering: SteeringArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// One training text per line.
    #[arg(long)]
    texts: PathBuf,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    questions: PathBuf,
    /// Comma-separated trait codes; all five by default.
    #[arg(long, value_delimiter = ',')]
    traits: Vec<TraitId>,
    #[arg(long, default_value = "-1,-0.5,0,0.5,1", allow_hyphen_values = true)]
    betas: String,
    #[arg(long, env = "LEXSTEER_GENERATIONS", default_value_t = 20)]
    generations: usize,
    #[command(flatten)]
    steering: SteeringArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, value_enum, default_value_t = StdArg::Sample)]
    std: StdArg,
    /// Judge program speaking the bridge protocol; frequency proxy if absent.
    #[arg(long)]
    judge_cmd: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    judge_arg: Vec<String>,
    #[arg(long, default_value = "judge")]
    judge_id: String,
    /// Also report perplexity per beta.
    #[arg(long)]
    ppl: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

#[derive(Args)]
struct SweepMArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long = "trait")]
    trait_id: TraitId,
    #[arg(long, default_value = "0.05,0.1,0.3,1.0,3.0")]
    m_grid: String,
    #[arg(long, env = "LEXSTEER_EPSILON", default_value_t = BuildOptions::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, env = "LEXSTEER_GENERATIONS", default_value_t = 20)]
    generations: usize,
    #[command(flatten)]
    steering: SteeringArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// `.csv` for CSV, otherwise JSON lines.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    manifest: ManifestArg,
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CommandError> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CommandError::Usage(format!("invalid {what} value {t:?}")))
        })
        .collect()
}

fn parse_m(text: &str) -> Result<TraitVector, CommandError> {
    let values = parse_list(text, "M")?;
    match values.as_slice() {
        [m] => Ok(TraitVector::splat(*m)),
        [a, b, c, d, e] => Ok(TraitVector([*a, *b, *c, *d, *e])),
        _ => Err(CommandError::Usage(format!("--m takes 1 or 5 values, got {}", values.len()))),
    }
}

fn judge_spec(args: &EvalArgs) -> Option<JudgeSpec> {
    args.judge_cmd.as_ref().map(|program| JudgeSpec {
        id: args.judge_id.clone(),
        program: program.clone(),
        args: args.judge_arg.clone(),
    })
}

fn to_config(command: Command) -> Result<Option<(RunConfig, Option<PathBuf>)>, CommandError> {
    let with_default = |manifest: Option<PathBuf>, out: Option<&Path>| manifest.or_else(|| out.map(default_manifest_path));
    let resolved = match command {
        Command::BuildLexicon(a) => {
            let manifest = with_default(a.manifest.manifest, Some(&a.out));
            let zero_convention = match a.zero_convention {
                ZeroArg::Exclude => ZeroConvention::Exclude,
                ZeroArg::CountInBoth => ZeroConvention::CountInBoth,
            };
            let config = BuildLexiconConfig {
                corpus: a.corpus,
                vocab: a.vocab,
                out: a.out,
                m: parse_m(&a.m)?,
                epsilon: a.epsilon,
                zero_convention,
            };
            (RunConfig::BuildLexicon(config), manifest)
        }
        Command::Generate(a) => {
            let manifest = with_default(a.manifest.manifest, a.out.as_deref());
            let config = GenerateConfig {
                vocab: a.vocab,
                lexicon: if a.no_lexicon { None } else { a.lexicon },
                source: a.source.spec(),
                prompts: a.prompts,
                out: a.out,
                steering: a.steering.config(),
                max_tokens: a.sampling.max_tokens,
                seed: a.sampling.seed,
                stop_at_eos: !a.sampling.no_stop_at_eos,
            };
            (RunConfig::Generate(config), manifest)
        }
        Command::TrainLm(a) => {
            let manifest = with_default(a.manifest.manifest, Some(&a.out));
            let config = TrainLmConfig { vocab: a.vocab, texts: a.texts, order: a.order, delta: a.delta, out: a.out };
            (RunConfig::TrainLm(config), manifest)
        }
        Command::Eval(a) => {
            let manifest = with_default(a.manifest.manifest.clone(), Some(&a.out));
            let judge = judge_spec(&a);
            let config = EvalConfig {
                vocab: a.vocab,
                lexicon: a.lexicon,
                source: a.source.spec(),
                questions: a.questions,
                traits: a.traits,
                betas: parse_list(&a.betas, "beta")?,
                steering: a.steering.config(),
                generations_per_question: a.generations,
                max_tokens: a.sampling.max_tokens,
                seed: a.sampling.seed,
                stop_at_eos: !a.sampling.no_stop_at_eos,
                std: match a.std {
                    StdArg::Sample => StdConvention::Sample,
                    StdArg::Population => StdConvention::Population,
                },
                judge,
                ppl: a.ppl,
                out: a.out,
            };
            (RunConfig::Eval(config), manifest)
        }
        Command::SweepM(a) => {
            let manifest = with_default(a.manifest.manifest, Some(&a.out));
            let config = SweepMConfig {
                corpus: a.corpus,
                vocab: a.vocab,
                source: a.source.spec(),
                questions: a.questions,
                trait_id: a.trait_id,
                m_grid: parse_list(&a.m_grid, "M grid")?,
                epsilon: a.epsilon,
                steering: a.steering.config(),
                generations_per_question: a.generations,
                max_tokens: a.sampling.max_tokens,
                seed: a.sampling.seed,
                stop_at_eos: !a.sampling.no_stop_at_eos,
                out: a.out,
            };
            (RunConfig::SweepM(config), manifest)
        }
        Command::ValidateCorpus { corpus } => {
            let corpus = load_corpus(&corpus).map_err(|e| CommandError::Input(e.to_string()))?;
            print!("{}", validate_corpus(&corpus));
            return Ok(None);
        }
        Command::Serve { model } => {
            let mut model = NGramModel::load(&model).map_err(|e| CommandError::Input(e.to_string()))?;
            let stdin = io::stdin();
            serve(&mut model, stdin.lock(), io::stdout().lock()).map_err(|e| CommandError::Run(e.to_string()))?;
            return Ok(None);
        }
        Command::Replay { manifest, out } => {
            let recorded = Manifest::load(&manifest)?;
            let report = replay(&recorded, out)?;
            print!("{}", report.outcome.stdout);
            eprint!("{}", report.outcome.stderr);
            for (role, before, after) in &report.compared {
                let status = if before == after { "match" } else { "MISMATCH" };
                eprintln!("{role}: {status}");
            }
            if !report.all_match() {
                return Err(CommandError::Replay("outputs differ from the manifest".into()));
            }
            return Ok(None);
        }
    };
    Ok(Some(resolved))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let resolved = match to_config(cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let Some((config, manifest)) = resolved else {
        return ExitCode::SUCCESS;
    };
    match execute(&config, manifest.as_deref()) {
        Ok(outcome) => {
            let mut stdout = io::stdout().lock();
            let _ = stdout.write_all(outcome.stdout.as_bytes());
            let _ = stdout.flush();
            eprint!("{}", outcome.stderr);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
