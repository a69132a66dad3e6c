//! One line per acceptance criterion; exits non-zero if any fails.

mod common;
mod oracles;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{path, Fixture};
use lexsteer::commands::{
    default_manifest_path, execute, replay, BuildLexiconConfig, EvalConfig, GenerateConfig, Manifest, RunConfig,
    SourceSpec, SweepMConfig, TrainLmConfig,
};
use lexsteer::decoding::{generate, seeded_rng, top_p_filter, GenerateOptions};
use lexsteer::eval::{
    pearson, ppl_stability, proxy_counts, proxy_sweep, spearman, two_proportion_test, FrequencyProxy, Prompt,
    StdConvention,
};
use lexsteer::lexicon::{build_lexicon, solve_ns, BuildOptions, ZeroConvention};
use lexsteer::toy_lm::train_ngram;
use lexsteer::{Lexicon, SteeringConfig, TraitId, TraitVector, Vocab};

type Check = fn() -> Result<String, String>;

const BETAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

fn main() {
    let checks: [(&str, Check); 10] = [
        ("published sweep statistics", published_sweeps),
        ("top-p oracle equivalence", top_p_oracle),
        ("solver residual contract", solver_contract),
        ("lexicon antisymmetry", antisymmetry),
        ("neutrality", neutrality),
        ("steering monotonicity", monotonicity),
        ("multi-trait composition", composition),
        ("perplexity stability", ppl),
        ("determinism and manifests", manifests),
        ("statistics precision", precision),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[PASS] {} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn published_sweeps() -> Result<String, String> {
    let rows: [(&str, [f64; 5], f64, f64); 6] = [
        ("llama2-7b", [4.286, 4.343, 4.427, 4.525, 4.558], 0.991, 1e-3),
        ("openchat", [3.626, 3.756, 3.981, 4.182, 4.237], 0.986, 2e-3),
        ("neural-chat", [3.809, 3.876, 3.999, 4.161, 4.220], 0.989, 1e-3),
        ("baichuan", [3.584, 3.710, 4.036, 4.248, 4.336], 0.983, 3e-3),
        ("llama2-13b", [3.856, 3.891, 4.135, 4.298, 4.322], 0.964, 8e-3),
        ("yi", [4.141, 4.177, 4.243, 4.373, 4.441], 0.982, 3e-3),
    ];
    for (name, means, r, p) in rows {
        let got = pearson(&BETAS, &means).map_err(|e| format!("{name}: {e}"))?;
        ensure((got.r - r).abs() <= 1e-3, || format!("{name}: R {} vs {r}", got.r))?;
        ensure(got.p >= p / 1.5 && got.p <= p * 1.5, || format!("{name}: P {} vs {p}", got.p))?;
    }
    Ok("6 rows".into())
}

fn random_distribution(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..=64);
    let mut weights: Vec<f64> = (0..n)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            2 => 2.0,
            _ => rng.random::<f64>(),
        })
        .collect();
    if weights.iter().all(|w| *w == 0.0) {
        weights[0] = 1.0;
    }
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| w / sum).collect()
}

fn top_p_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..10_000 {
        let probs = random_distribution(&mut rng);
        let top_p = match rng.random_range(0..10) {
            0 => 1.0,
            _ => 1.0 - rng.random::<f64>(),
        };
        let got: Vec<u32> = top_p_filter(&probs, top_p).ids().collect();
        let want = oracles::nucleus(&probs, top_p);
        ensure(got == want, || format!("case {case}: top_p {top_p}, got {got:?}, want {want:?}"))?;
    }
    Ok("10000 cases".into())
}

fn solver_contract() -> Result<String, String> {
    let eps = BuildOptions::DEFAULT_EPSILON;
    let m = BuildOptions::DEFAULT_M;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let len = rng.random_range(2..=60);
        let mut column: Vec<f64> = (0..len).map(|_| rng.random_range(-50..=50) as f64).collect();
        column[0] = rng.random_range(1..=50) as f64;
        column[1] = -(rng.random_range(1..=50) as f64);
        let sol = solve_ns(&column, m, eps).map_err(|e| format!("case {case}: {e}"))?;
        let (rp, rn) = (sol.residual_pos(m, true), sol.residual_neg(m, true));
        ensure(sol.converged && rp <= eps && rn <= eps, || format!("case {case}: residuals {rp} {rn}"))?;
        let (_, _, gp, gn) = oracles::grid_solve(&column, m);
        let gap = (rp - gp.abs()).abs().max((rn - gn.abs()).abs());
        worst = worst.max(gap);
        ensure(gap <= 10.0 * eps, || format!("case {case}: grid residuals {gp} {gn}, solver {rp} {rn}"))?;
    }
    Ok(format!("200 columns, largest residual gap to grid {worst:.2e}"))
}

fn antisymmetry() -> Result<String, String> {
    let fx = Fixture::load();
    let opts = BuildOptions::default();
    for t in TraitId::ALL {
        let swapped = build_lexicon(&fx.corpus.with_swapped_polarity(t), &fx.vocab, &opts).map_err(|e| e.to_string())?;
        for (id, v) in fx.lexicon.entries() {
            let w = swapped.get(id);
            for u in TraitId::ALL {
                let want = if u == t { -v[u] } else { v[u] };
                // Zero counts stay +0.0 rather than becoming -0.0.
                let same = if want == 0.0 { w[u] == 0.0 } else { w[u].to_bits() == want.to_bits() };
                ensure(same, || {
                    format!("swap {t}: token {id} trait {u}: {} vs {}", w[u], want)
                })?;
            }
        }
    }
    Ok(format!("5 traits, {} tokens", fx.vocab.len()))
}

fn neutrality() -> Result<String, String> {
    let fx = Fixture::load();
    let prompts = fx.prompts(TraitId::Openness);
    let opts = GenerateOptions { max_tokens: 24, stop_token: Some(fx.vocab.eos()) };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for run in 0..1000u64 {
        let prompt = &prompts[run as usize % prompts.len()];
        let beta = TraitVector(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
        let no_alpha = SteeringConfig { alpha: 0.0, beta, ..SteeringConfig::default() };
        let no_beta = SteeringConfig { alpha: rng.random_range(0.1..3.0), ..SteeringConfig::default() };
        let mut source = fx.model.clone();
        let plain = generate(&mut source, None, &SteeringConfig::default(), &prompt.tokens, &opts, &mut seeded_rng(run, 0))
            .map_err(|e| e.to_string())?;
        for cfg in [no_alpha, no_beta] {
            let steered = generate(&mut source, Some(&fx.lexicon), &cfg, &prompt.tokens, &opts, &mut seeded_rng(run, 0))
                .map_err(|e| e.to_string())?;
            ensure(steered == plain, || format!("run {run}: alpha {} beta {:?} diverged", cfg.alpha, cfg.beta))?;
        }
    }
    Ok("1000 runs, alpha=0 and beta=0".into())
}

fn monotonicity() -> Result<String, String> {
    let fx = Fixture::load();
    let settings = fx.settings(100);
    let mut parts = Vec::new();
    for t in TraitId::ALL {
        let prompts = fx.prompts(t);
        let mut source = fx.model.clone();
        let row = proxy_sweep(&mut source, &fx.lexicon, t, &BETAS, &prompts, &settings).map_err(|e| e.to_string())?;
        let c = row.correlation.ok_or_else(|| format!("{t}: {}", row.correlation_error.unwrap_or_default()))?;
        ensure(c.r > 0.9, || format!("{t}: R {:.3}", c.r))?;
        parts.push(format!("{} R={:.3}", t.code(), c.r));
    }
    Ok(format!("{} generations per point; {}", 5 * 100, parts.join(", ")))
}

fn composition() -> Result<String, String> {
    let mut tokens = Vec::new();
    for group in ["a", "b", "c", "d"] {
        for i in 0..4 {
            tokens.push(format!(" {group}{i}"));
        }
    }
    tokens.push(".".into());
    tokens.push("<eos>".into());
    let eos = (tokens.len() - 1) as u32;
    let vocab = Vocab::from_tokens(tokens.clone(), Some(eos)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let texts: Vec<String> = (0..400)
        .map(|_| {
            let mut text = String::new();
            for _ in 0..4 {
                let len = rng.random_range(3..9);
                text.extend((0..len).map(|_| tokens[rng.random_range(0..16)].clone()));
                text.push('.');
            }
            text + "<eos>"
        })
        .collect();
    let model = train_ngram(&texts, &vocab, 2, 0.1).map_err(|e| e.to_string())?;

    let id = |s: &str| vocab.id_of(s).expect("fixture token");
    let group = |g: &str| (0..4).map(|i| id(&format!(" {g}{i}"))).collect::<Vec<_>>();
    let mut column = vec![0.0; vocab.len()];
    for &t in &group("a") {
        column[t as usize] = 1.0;
    }
    for &t in &group("c") {
        column[t as usize] = -1.0;
    }
    let scale = solve_ns(&column, BuildOptions::DEFAULT_M, BuildOptions::DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let mut entries = Vec::new();
    for (g, trait_id, sign) in [
        ("a", TraitId::Openness, 1.0),
        ("c", TraitId::Openness, -1.0),
        ("b", TraitId::Neuroticism, 1.0),
        ("d", TraitId::Neuroticism, -1.0),
    ] {
        for t in group(g) {
            entries.push((t, TraitVector::single(trait_id, scale.apply(sign))));
        }
    }
    let lexicon = Lexicon::from_entries(vocab.fingerprint(), vocab.len(), entries);
    let proxy = FrequencyProxy::from_sets(vocab.len(), &[group("a"), vec![], vec![], vec![], group("b")]);

    let prompts: Vec<Prompt> = (0..5).map(|i| Prompt::new(format!("q{i}"), vec![id(".")])).collect();
    let settings = lexsteer::eval::SweepSettings {
        generations_per_prompt: 100,
        max_tokens: 16,
        stop_token: Some(eos),
        ..Default::default()
    };
    let mut beta = TraitVector::ZERO;
    beta[TraitId::Openness] = 1.0;
    beta[TraitId::Neuroticism] = -1.0;
    let mut source = model.clone();
    let (base, base_n) = proxy_counts(&mut source, &lexicon, &proxy, TraitVector::ZERO, &prompts, &settings)
        .map_err(|e| e.to_string())?;
    let (steer, steer_n) =
        proxy_counts(&mut source, &lexicon, &proxy, beta, &prompts, &settings).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for (t, up) in [(TraitId::Openness, true), (TraitId::Neuroticism, false)] {
        let i = t.index();
        let (z, p) = two_proportion_test(steer[i], steer_n, base[i], base_n).map_err(|e| e.to_string())?;
        let (rs, rb) = (steer[i] as f64 / steer_n as f64, base[i] as f64 / base_n as f64);
        ensure((z > 0.0) == up && p < 0.05, || format!("trait {t}: rate {rs:.4} vs {rb:.4}, z {z:.2}, p {p:.2e}"))?;
        parts.push(format!("{} {rb:.3}->{rs:.3} p={p:.1e}", t.code()));
    }
    Ok(format!("500 generations per condition; {}", parts.join(", ")))
}

fn ppl() -> Result<String, String> {
    let fx = Fixture::load();
    let settings = fx.settings(20);
    let mut worst = 0.0f64;
    for t in TraitId::ALL {
        let table =
            ppl_stability(&fx.model, &fx.lexicon, t, &BETAS, &fx.prompts(t), &settings).map_err(|e| e.to_string())?;
        worst = worst.max(table.max_relative_deviation);
        ensure(table.max_relative_deviation <= 0.15, || {
            format!("{t}: deviation {:.4}", table.max_relative_deviation)
        })?;
    }
    Ok(format!("largest relative deviation {worst:.4}"))
}

fn replay_matches(config: RunConfig, dir: &Path, tag: &str) -> Result<(), String> {
    let manifest_path = dir.join(format!("{tag}.manifest.json"));
    let first = execute(&config, Some(&manifest_path)).map_err(|e| format!("{tag}: {e}"))?;
    let manifest = Manifest::load(&manifest_path).map_err(|e| e.to_string())?;
    ensure(!manifest.outputs.is_empty(), || format!("{tag}: no outputs recorded"))?;
    let report = replay(&manifest, None).map_err(|e| format!("{tag}: {e}"))?;
    ensure(report.all_match(), || format!("{tag}: in-place replay mismatch {:?}", report.compared))?;
    if let Some(out) = config.out() {
        let moved = dir.join(format!("{tag}-replay-{}", out.file_name().unwrap().to_string_lossy()));
        let report = replay(&manifest, Some(moved)).map_err(|e| format!("{tag}: {e}"))?;
        ensure(report.all_match(), || format!("{tag}: retargeted replay mismatch {:?}", report.compared))?;
        for ((role, a), (_, b)) in first.outputs.iter().zip(&report.outcome.outputs) {
            let (x, y) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
            ensure(x == y, || format!("{tag}: {role} bytes differ"))?;
        }
    } else {
        ensure(report.outcome.stdout == first.stdout, || format!("{tag}: stdout differs"))?;
    }
    Ok(())
}

fn manifests() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let vocab = path("vocab.txt");
    let model: PathBuf = d.join("model.json");
    let lexicon = d.join("lexicon.json");
    let prompts = d.join("prompts.txt");
    std::fs::write(&prompts, "I am quite\nI often feel\nI am quite\n").unwrap();
    let steering = SteeringConfig { beta: TraitVector::single(TraitId::Extraversion, 1.0), ..Default::default() };
    let toy = SourceSpec::Toy { model: model.clone() };

    let configs = vec![
        (
            "train-lm",
            RunConfig::TrainLm(TrainLmConfig {
                vocab: vocab.clone(),
                texts: path("lm_texts.txt"),
                order: 2,
                delta: 0.1,
                out: model.clone(),
            }),
        ),
        (
            "build-lexicon",
            RunConfig::BuildLexicon(BuildLexiconConfig {
                corpus: path("corpus.jsonl"),
                vocab: vocab.clone(),
                out: lexicon.clone(),
                m: TraitVector::splat(BuildOptions::DEFAULT_M),
                epsilon: BuildOptions::DEFAULT_EPSILON,
                zero_convention: ZeroConvention::Exclude,
            }),
        ),
        (
            "build-lexicon-degenerate",
            RunConfig::BuildLexicon(BuildLexiconConfig {
                corpus: path("corpus_degenerate.jsonl"),
                vocab: vocab.clone(),
                out: d.join("degenerate.json"),
                m: TraitVector::splat(BuildOptions::DEFAULT_M),
                epsilon: BuildOptions::DEFAULT_EPSILON,
                zero_convention: ZeroConvention::Exclude,
            }),
        ),
    ];
    let generate = |out: Option<PathBuf>| GenerateConfig {
        vocab: vocab.clone(),
        lexicon: Some(lexicon.clone()),
        source: toy.clone(),
        prompts: prompts.clone(),
        out,
        steering,
        max_tokens: 24,
        seed: 11,
        stop_at_eos: true,
    };
    let later = vec![
        ("generate", RunConfig::Generate(generate(Some(d.join("generated.txt"))))),
        ("generate-stdout", RunConfig::Generate(generate(None))),
        (
            "eval",
            RunConfig::Eval(EvalConfig {
                vocab: vocab.clone(),
                lexicon: lexicon.clone(),
                source: toy.clone(),
                questions: path("questions.jsonl"),
                traits: TraitId::ALL.to_vec(),
                betas: BETAS.to_vec(),
                steering: SteeringConfig::default(),
                generations_per_question: 4,
                max_tokens: 24,
                seed: 3,
                stop_at_eos: true,
                std: StdConvention::Sample,
                judge: None,
                ppl: true,
                out: d.join("eval.txt"),
            }),
        ),
        (
            "sweep-m",
            RunConfig::SweepM(SweepMConfig {
                corpus: path("corpus.jsonl"),
                vocab: vocab.clone(),
                source: toy.clone(),
                questions: path("questions.jsonl"),
                trait_id: TraitId::Extraversion,
                m_grid: vec![0.05, 0.1, 0.3, 1.0, 3.0],
                epsilon: BuildOptions::DEFAULT_EPSILON,
                steering,
                generations_per_question: 4,
                max_tokens: 24,
                seed: 5,
                stop_at_eos: true,
                out: d.join("sweep.csv"),
            }),
        ),
    ];
    let mut names = Vec::new();
    for (tag, config) in configs.into_iter().chain(later) {
        replay_matches(config, d, tag)?;
        names.push(tag);
    }
    ensure(default_manifest_path(Path::new("x.txt")) == Path::new("x.txt.manifest.json"), || {
        "default manifest path".into()
    })?;
    Ok(names.join(", "))
}

fn precision() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_r, mut worst_p) = (0.0f64, 0.0f64);
    let mut case = 0;
    while case < 1000 {
        let n = rng.random_range(3..=50);
        let spread = [3, 10, 1000][rng.random_range(0..3)];
        let x: Vec<i64> = (0..n).map(|_| rng.random_range(-spread..=spread)).collect();
        let y: Vec<i64> = (0..n).map(|_| rng.random_range(-spread..=spread)).collect();
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let (Ok(p), Ok(s)) = (pearson(&xf, &yf), spearman(&xf, &yf)) else {
            continue;
        };
        for (name, got, want) in
            [("pearson", p, oracles::pearson_exact(&x, &y)), ("spearman", s, oracles::spearman_exact(&x, &y))]
        {
            let (dr, dp) = ((got.r - want.0).abs(), (got.p - want.1).abs());
            worst_r = worst_r.max(dr);
            worst_p = worst_p.max(dp);
            ensure(dr <= 1e-12 && dp <= 1e-9, || {
                format!("case {case} {name} n={n}: R {} vs {}, P {} vs {}", got.r, want.0, got.p, want.1)
            })?;
        }
        case += 1;
    }
    Ok(format!("1000 cases, max |dR| {worst_r:.1e}, max |dP| {worst_p:.1e}"))
}
