//! Subcommand implementations.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use elliptical::estimators::bench::{run_estimator_bench, BenchConfig, KENDALL_THRESHOLD};
use elliptical::io::{write_heatmap, write_report, write_table};
use elliptical::metric::{KappaFault, ScalingMode};
use elliptical::model::{
    alternating_text, corrupt_tokens, diagnose, load_checkpoint, markov_text, perplexity, save_checkpoint, train,
    AdamState, Checkpoint, Corpus, DiagnoseConfig, Model, ModelConfig, TrainConfig,
};
use elliptical::nwlab::{
    log_grid, run_edge_preservation_experiment, run_sparse_mse_experiment, EdgeConfig, NWMethod, SparseMseConfig,
    SparseTruth, WeightSource,
};
use elliptical::stats::{paired_t_test_greater, pooled_standard_error};
use elliptical::verify::{run_all, VerifyConfig};
use elliptical::Rng;

use crate::config::{opt, parse_pairs, req, KeySpec, RunConfig};
use crate::CliError;

const TAG_EVAL_CORRUPT: u64 = 0xc0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    NwSparse,
    EdgePreserve,
    EstimatorBench,
    TrainLm,
    Diagnose,
    Verify,
}

const NW_COMMON: &[KeySpec] = &[
    opt("noise", "0.3"),
    opt("seeds", "20"),
    opt("weights", "pilot"),
    opt("weights_t", "0.5"),
    opt("scaling", "maxscale"),
    opt("bandwidth", "auto"),
    opt("folds", "5"),
    opt("grid_min", "0.05"),
    opt("grid_max", "2"),
    opt("grid_size", "12"),
    opt("half_width", "3"),
    opt("pilot_points", "200"),
];

const CORPUS_KEYS: &[KeySpec] = &[
    opt("corpus", "markov"),
    opt("corpus_len", "60000"),
    opt("corpus_seed", "0"),
    opt("eval_fraction", "0.1"),
];

impl Command {
    pub const ALL: [Command; 6] = [
        Command::NwSparse,
        Command::EdgePreserve,
        Command::EstimatorBench,
        Command::TrainLm,
        Command::Diagnose,
        Command::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::NwSparse => "nw-sparse",
            Command::EdgePreserve => "edge-preserve",
            Command::EstimatorBench => "estimator-bench",
            Command::TrainLm => "train-lm",
            Command::Diagnose => "diagnose",
            Command::Verify => "verify",
        }
    }

    /// Built-in configuration used when no config file is given.
    pub fn default_config(self) -> &'static str {
        match self {
            Command::NwSparse => include_str!("../configs/nw-sparse.conf"),
            Command::EdgePreserve => include_str!("../configs/edge-preserve.conf"),
            Command::EstimatorBench => include_str!("../configs/estimator-bench.conf"),
            Command::TrainLm => include_str!("../configs/train-lm.conf"),
            Command::Diagnose => include_str!("../configs/diagnose.conf"),
            Command::Verify => include_str!("../configs/verify.conf"),
        }
    }

    pub fn keys(self) -> Vec<KeySpec> {
        let mut keys = vec![req("seed")];
        match self {
            Command::NwSparse => {
                keys.extend([req("n"), opt("dim", "5"), opt("truth", "sparse"), opt("test_queries", "500")]);
                keys.extend_from_slice(NW_COMMON);
            }
            Command::EdgePreserve => {
                keys.extend([req("n"), opt("dim", "2"), opt("offset", "0.1"), opt("below", "1,0"), opt("above", "0,1")]);
                keys.extend_from_slice(NW_COMMON);
            }
            Command::EstimatorBench => keys.extend([
                req("n"),
                opt("dim", "6"),
                opt("delta", "0.05"),
                opt("spread", "0.5"),
                opt("noise", "0.01"),
                opt("t", "0.01"),
                opt("oracle_samples", "2000"),
                opt("seeds", "20"),
                opt("rate_ns", "100,1000,10000,100000"),
                opt("rate_seeds", "10"),
            ]),
            Command::TrainLm => {
                keys.extend([
                    req("steps"),
                    opt("layers", "4"),
                    opt("heads", "2"),
                    opt("head_dim", "16"),
                    opt("embed_dim", "32"),
                    opt("ff_dim", "64"),
                    opt("context", "64"),
                    opt("elliptical", "true"),
                    opt("scaling", "maxscale"),
                    opt("delta", "1"),
                    opt("lr", "0.0003"),
                    opt("beta1", "0.9"),
                    opt("beta2", "0.999"),
                    opt("eps", "1e-8"),
                    opt("batch_size", "8"),
                ]);
                keys.extend_from_slice(CORPUS_KEYS);
                keys.extend([
                    opt("eval_windows", "16"),
                    opt("corrupt", "false"),
                    opt("corruption_rate", "0.025"),
                    opt("resume", ""),
                ]);
            }
            Command::Diagnose => {
                keys.push(req("checkpoint"));
                keys.extend_from_slice(CORPUS_KEYS);
                keys.extend([
                    opt("epsilons", "0.01,0.1,1"),
                    opt("corruption_rate", "0.025"),
                    opt("robust_samples", "4"),
                    opt("windows", "4"),
                    opt("eval_windows", "16"),
                ]);
            }
            Command::Verify => keys.push(opt("fault", "none")),
        }
        keys
    }

    /// Resolves a config from file text (or the built-in config) plus overrides.
    pub fn resolve(self, file: Option<&str>, overrides: Vec<(String, String)>) -> Result<RunConfig, CliError> {
        let pairs = parse_pairs(file.unwrap_or(self.default_config()))?;
        RunConfig::resolve(self.name(), &self.keys(), pairs, overrides)
    }
}

/// Result of a run: summary lines already written to `summary.txt`, and
/// whether every check it performed passed.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub passed: bool,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| CliError::file(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::file(path, e))
}

fn usage<T>(e: elliptical::Error) -> Result<T, CliError> {
    Err(CliError::Usage(e.to_string()))
}

/// Runs `cmd` with `cfg`, writing every output under `out`.
pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::file(out, e))?;
    write_text(&out.join("config.txt"), &cfg.echo())?;
    let outcome = match cmd {
        Command::NwSparse => nw_sparse(cfg, out)?,
        Command::EdgePreserve => edge_preserve(cfg, out)?,
        Command::EstimatorBench => estimator_bench(cfg, out)?,
        Command::TrainLm => train_lm(cfg, out)?,
        Command::Diagnose => diagnose_cmd(cfg, out)?,
        Command::Verify => verify(cfg)?,
    };
    let mut summary = String::new();
    for l in &outcome.lines {
        summary.push_str(l);
        summary.push('\n');
    }
    write_text(&out.join("summary.txt"), &summary)?;
    Ok(outcome)
}

fn status(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn weight_source(cfg: &RunConfig) -> Result<WeightSource, CliError> {
    let t: f64 = cfg.get("weights_t")?;
    match cfg.raw("weights") {
        "pilot" => Ok(WeightSource::Pilot { t }),
        "truth" => Ok(WeightSource::Truth { t }),
        "oracle" => Ok(WeightSource::Oracle),
        other => Err(CliError::Usage(format!("key `weights`: expected pilot, truth or oracle, got `{other}`"))),
    }
}

fn scaling(cfg: &RunConfig) -> Result<ScalingMode, CliError> {
    cfg.raw("scaling").parse().or_else(usage)
}

fn grid(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let (lo, hi, n): (f64, f64, usize) = (cfg.get("grid_min")?, cfg.get("grid_max")?, cfg.get("grid_size")?);
    if !(lo > 0.0) || !(hi >= lo) || n == 0 {
        return Err(CliError::Usage(format!("bandwidth grid [{lo}, {hi}] x {n} is invalid")));
    }
    Ok(log_grid(lo, hi, n))
}

fn nw_sparse(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let truth: SparseTruth = cfg.raw("truth").parse().or_else(usage)?;
    let exp = SparseMseConfig {
        dim: cfg.get("dim")?,
        n: cfg.get("n")?,
        noise_std: cfg.get("noise")?,
        seeds: cfg.get("seeds")?,
        test_queries: cfg.get("test_queries")?,
        truth,
        weight_source: weight_source(cfg)?,
        scaling: scaling(cfg)?,
        bandwidth: cfg.optional("bandwidth")?,
        folds: cfg.get("folds")?,
        grid: grid(cfg)?,
        half_width: cfg.get("half_width")?,
        pilot_points: cfg.get("pilot_points")?,
        seed: cfg.get("seed")?,
    };
    let [eu, el] = run_sparse_mse_experiment(&exp)?;
    let mut rows = eu.rows("nw-sparse");
    rows.extend(el.rows("nw-sparse"));
    write_report(create(&out.join("report.csv"))?, &rows)?;

    let mut lines = vec![
        format!("euclidean mse {} se {}", eu.mse, eu.standard_error),
        format!("elliptical mse {} se {}", el.mse, el.standard_error),
    ];
    let passed = if truth == SparseTruth::EqualVariability {
        let gap = (el.mse - eu.mse).abs();
        let pooled = pooled_standard_error(&eu.per_seed_mse, &el.per_seed_mse);
        let ok = gap <= 2.0 * pooled;
        lines.push(format!("{} null: |gap| {gap} <= 2 pooled se {}", status(ok), 2.0 * pooled));
        ok
    } else {
        let (_, p) = paired_t_test_greater(&eu.per_seed_mse, &el.per_seed_mse);
        let ok = el.mse < eu.mse && p < 0.05;
        lines.push(format!("{} direction: elliptical < euclidean, one-sided paired p {p}", status(ok)));
        ok
    };
    Ok(Outcome { lines, passed })
}

fn edge_preserve(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let exp = EdgeConfig {
        dim: cfg.get("dim")?,
        n: cfg.get("n")?,
        noise_std: cfg.get("noise")?,
        seeds: cfg.get("seeds")?,
        half_width: cfg.get("half_width")?,
        offset: cfg.get("offset")?,
        below: cfg.list("below")?,
        above: cfg.list("above")?,
        weight_source: weight_source(cfg)?,
        scaling: scaling(cfg)?,
        bandwidth: cfg.optional("bandwidth")?,
        folds: cfg.get("folds")?,
        grid: grid(cfg)?,
        pilot_points: cfg.get("pilot_points")?,
        methods: [NWMethod::Euclidean, NWMethod::Elliptical],
        seed: cfg.get("seed")?,
    };
    let rep = run_edge_preservation_experiment(&exp)?;
    write_report(create(&out.join("report.csv"))?, &rep.rows("edge-preserve", exp.n))?;
    let [eu, el] = &rep.results;
    let ok = el.mean >= eu.mean;
    Ok(Outcome {
        lines: vec![
            format!("truth distance {}", rep.truth_distance),
            format!("euclidean distance {} se {}", eu.mean, eu.standard_error),
            format!("elliptical distance {} se {}", el.mean, el.standard_error),
            format!("{} direction: elliptical >= euclidean", status(ok)),
        ],
        passed: ok,
    })
}

fn estimator_bench(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let bench = BenchConfig {
        dim: cfg.get("dim")?,
        n: cfg.get("n")?,
        delta: cfg.get("delta")?,
        spread: cfg.get("spread")?,
        noise_std: cfg.get("noise")?,
        t: cfg.get("t")?,
        oracle_samples: cfg.get("oracle_samples")?,
        seeds: cfg.get("seeds")?,
        rate_ns: cfg.list("rate_ns")?,
        rate_seeds: cfg.get("rate_seeds")?,
        seed: cfg.get("seed")?,
    };
    let rep = run_estimator_bench(&bench)?;
    write_report(create(&out.join("report.csv"))?, &rep.rows("estimator-bench", bench.n))?;
    let tau = rep.min_overlayers_tau();
    let tau_ok = tau >= KENDALL_THRESHOLD;
    let slope_ok = (rep.rate_slope + 0.5).abs() <= 0.2;
    Ok(Outcome {
        lines: vec![
            format!("{} ranking: min overlayers kendall tau {tau} >= {KENDALL_THRESHOLD}", status(tau_ok)),
            format!("{} rate: consistent log-log slope {} in [-0.7, -0.3]", status(slope_ok), rep.rate_slope),
        ],
        passed: tau_ok && slope_ok,
    })
}

/// Training or evaluation text named by the `corpus` keys: `markov`,
/// `alternating`, or a path to a UTF-8 file (read whole).
fn load_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let len: usize = cfg.get("corpus_len")?;
    let text = match cfg.raw("corpus") {
        "markov" => markov_text(cfg.get("corpus_seed")?, len),
        "alternating" => alternating_text(len),
        path => fs::read_to_string(path).map_err(|e| CliError::file(Path::new(path), e))?,
    };
    Ok(Corpus::from_text(&text, cfg.get("eval_fraction")?)?)
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::file(path, e))?;
    Ok(load_checkpoint(BufReader::new(f))?)
}

fn train_lm(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let corpus = load_corpus(cfg)?;
    let model_cfg = ModelConfig {
        layers: cfg.get("layers")?,
        heads: cfg.get("heads")?,
        head_dim: cfg.get("head_dim")?,
        embed_dim: cfg.get("embed_dim")?,
        ff_dim: cfg.get("ff_dim")?,
        vocab_size: corpus.vocab.len(),
        context: cfg.get("context")?,
        elliptical: cfg.get("elliptical")?,
        scaling: scaling(cfg)?,
        delta: cfg.get("delta")?,
        seed: cfg.get("seed")?,
    };
    let tcfg = TrainConfig {
        lr: cfg.get("lr")?,
        beta1: cfg.get("beta1")?,
        beta2: cfg.get("beta2")?,
        eps: cfg.get("eps")?,
        batch_size: cfg.get("batch_size")?,
    };
    let steps: usize = cfg.get("steps")?;

    let (mut model, mut adam) = match cfg.raw("resume") {
        "" => {
            let model = Model::new(model_cfg).or_else(usage)?;
            let adam = AdamState::new(&model);
            (model, adam)
        }
        path => {
            let ck = read_checkpoint(Path::new(path))?;
            if ck.model.cfg != model_cfg || ck.train != tcfg || ck.vocab != corpus.vocab {
                return Err(CliError::Usage(format!("checkpoint {path} does not match the model, optimizer or corpus keys")));
            }
            (ck.model, ck.adam)
        }
    };
    let start = adam.step;
    let losses = train(&mut model, &mut adam, &corpus.train, steps, &tcfg)?;

    let loss_rows: Vec<Vec<String>> =
        losses.iter().enumerate().map(|(i, l)| vec![(start + i as u64).to_string(), l.to_string()]).collect();
    write_table(create(&out.join("loss.csv"))?, &["step", "loss"], &loss_rows)?;

    let windows: usize = cfg.get("eval_windows")?;
    let span = (windows * model.cfg.context + 1).min(corpus.eval.len());
    let tokens = &corpus.eval[..span];
    let clean = perplexity(&model, tokens, tokens, windows)?;
    let corrupted = if cfg.get::<bool>("corrupt")? {
        let mut rng = Rng::derive(model.cfg.seed, &[TAG_EVAL_CORRUPT]);
        let inputs = corrupt_tokens(tokens, cfg.get("corruption_rate")?, corpus.vocab.generic_id(), &mut rng)?;
        Some(perplexity(&model, &inputs, tokens, windows)?)
    } else {
        None
    };
    write_table(
        create(&out.join("eval.csv"))?,
        &["step", "clean_perplexity", "corrupted_perplexity"],
        &[vec![adam.step.to_string(), clean.to_string(), corrupted.map(|c| c.to_string()).unwrap_or_default()]],
    )?;

    let ck = Checkpoint { model, adam, vocab: corpus.vocab, train: tcfg };
    let mut w = create(&out.join("checkpoint.txt"))?;
    save_checkpoint(&mut w, &ck)?;
    w.flush().map_err(|e| CliError::file(&out.join("checkpoint.txt"), e))?;

    let mut lines = vec![format!("trained steps {start}..{}", ck.adam.step)];
    if let Some(l) = losses.last() {
        lines.push(format!("final loss {l}"));
    }
    lines.push(format!("eval perplexity {clean}"));
    if let Some(c) = corrupted {
        lines.push(format!("corrupted eval perplexity {c}"));
    }
    Ok(Outcome { lines, passed: true })
}

fn diagnose_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let ck = read_checkpoint(Path::new(cfg.raw("checkpoint")))?;
    let corpus = load_corpus(cfg)?;
    let eval = ck.vocab.encode(&corpus.vocab.decode(&corpus.eval))?;
    let dcfg = DiagnoseConfig {
        epsilons: cfg.list("epsilons")?,
        corruption_rate: cfg.get("corruption_rate")?,
        robust_samples: cfg.get("robust_samples")?,
        windows: cfg.get("windows")?,
        eval_windows: cfg.get("eval_windows")?,
        seed: cfg.get("seed")?,
    };
    let rep = diagnose(&ck.model, &eval, &dcfg)?;

    let mut rows = Vec::new();
    let mut per_layer = |metric: String, values: &[f64]| {
        for (l, v) in values.iter().enumerate() {
            rows.push(vec![metric.clone(), l.to_string(), v.to_string()]);
        }
    };
    per_layer("cosine_similarity".into(), &rep.cosine_similarity);
    per_layer("head_distance".into(), &rep.head_distance);
    for (eps, r) in &rep.robustness {
        per_layer(format!("robustness_eps_{eps}"), r);
    }
    write_table(create(&out.join("diagnostics.csv"))?, &["metric", "layer", "value"], &rows)?;
    write_table(
        create(&out.join("perplexity.csv"))?,
        &["metric", "value"],
        &[
            vec!["clean".into(), rep.clean_perplexity.to_string()],
            vec!["corrupted".into(), rep.corrupted_perplexity.to_string()],
            vec!["gap".into(), rep.perplexity_gap().to_string()],
        ],
    )?;
    let dir = out.join("heatmaps");
    fs::create_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
    for (l, heads) in rep.heatmaps.iter().enumerate() {
        for (h, attn) in heads.iter().enumerate() {
            let path = dir.join(format!("layer{l}_head{h}.csv"));
            let mut w = create(&path)?;
            write_heatmap(&mut w, attn)?;
            w.flush().map_err(|e| CliError::file(&path, e))?;
        }
    }
    let last = rep.cosine_similarity.len().saturating_sub(1);
    Ok(Outcome {
        lines: vec![
            format!("final layer cosine similarity {}", rep.cosine_similarity[last]),
            format!("perplexity clean {} corrupted {}", rep.clean_perplexity, rep.corrupted_perplexity),
        ],
        passed: true,
    })
}

fn verify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let fault = match cfg.raw("fault") {
        "none" => None,
        "kappa-off-by-one" => Some(KappaFault::DimensionOffByOne),
        other => return Err(CliError::Usage(format!("key `fault`: expected none or kappa-off-by-one, got `{other}`"))),
    };
    let results = run_all(&VerifyConfig { seed: cfg.get("seed")?, fault });
    Ok(Outcome {
        lines: results.iter().map(|r| r.to_string()).collect(),
        passed: results.iter().all(|r| r.passed()),
    })
}
