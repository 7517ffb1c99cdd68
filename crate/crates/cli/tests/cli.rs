use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use elliptical::model::{load_checkpoint, save_checkpoint, AdamState, Checkpoint, Corpus, Model, ModelConfig, TrainConfig};
use elliptical::model::markov_text;
use elliptical_cli::config::parse_override;
use elliptical_cli::{run, CliError, Command};

const SMALL_LM: &[&str] = &[
    "layers=2", "heads=2", "head_dim=4", "embed_dim=8", "ff_dim=16", "context=16", "corpus_len=3000", "eval_windows=4",
];

fn sets(extra: &[&str]) -> Vec<(String, String)> {
    extra.iter().map(|s| parse_override(s).unwrap()).collect()
}

fn run_with(cmd: Command, extra: &[&str], out: &Path) -> Result<elliptical_cli::Outcome, CliError> {
    let cfg = cmd.resolve(None, sets(extra))?;
    run(cmd, &cfg, out)
}

/// Relative path and bytes of every file under `dir`, sorted.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small(cmd: Command) -> Vec<&'static str> {
    match cmd {
        Command::NwSparse => vec!["n=80", "seeds=2", "test_queries=20", "pilot_points=40"],
        Command::EdgePreserve => vec!["n=80", "seeds=2", "pilot_points=40"],
        Command::EstimatorBench => vec!["n=200", "seeds=2", "oracle_samples=100", "rate_ns=100,400", "rate_seeds=2"],
        Command::TrainLm => [SMALL_LM, &["steps=3", "corrupt=true"]].concat(),
        Command::Diagnose | Command::Verify => vec![],
    }
}

#[test]
fn missing_required_key_names_it() {
    let err = Command::NwSparse.resolve(Some("seed = 0\ndim = 5\n"), vec![]).unwrap_err();
    assert!(matches!(&err, CliError::Usage(m) if m.contains("`n`")), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_key_is_rejected() {
    let err = Command::Verify.resolve(None, sets(&["bandwith=1"])).unwrap_err();
    assert!(err.to_string().contains("`bandwith`"), "{err}");
}

#[test]
fn built_in_configs_resolve() {
    for cmd in Command::ALL {
        let cfg = cmd.resolve(None, vec![]).unwrap();
        // every key the built-in file sets is echoed with the same value
        for (k, v) in elliptical_cli::config::parse_pairs(cmd.default_config()).unwrap() {
            assert_eq!(cfg.raw(&k), v, "{} {k}", cmd.name());
        }
    }
}

#[test]
fn subcommands_are_deterministic_and_echo_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let ck_dir = tmp.path().join("ck");
    run_with(Command::TrainLm, &small(Command::TrainLm), &ck_dir).unwrap();
    let ck = format!("checkpoint={}", ck_dir.join("checkpoint.txt").display());
    for cmd in Command::ALL {
        let mut extra = small(cmd);
        let diag: Vec<&str>;
        if cmd == Command::Diagnose {
            diag = [SMALL_LM[6], "windows=2", "eval_windows=2", "robust_samples=1", ck.as_str()].to_vec();
            extra = diag;
        }
        let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
        run_with(cmd, &extra, &a.join(cmd.name())).unwrap();
        run_with(cmd, &extra, &b.join(cmd.name())).unwrap();
        let first = snapshot(&a.join(cmd.name()));
        assert!(first.len() >= 2, "{}", cmd.name());
        assert_eq!(first, snapshot(&b.join(cmd.name())), "{}", cmd.name());

        let echo = fs::read_to_string(a.join(cmd.name()).join("config.txt")).unwrap();
        let cfg = cmd.resolve(Some(&echo), vec![]).unwrap();
        run(cmd, &cfg, &c.join(cmd.name())).unwrap();
        assert_eq!(first, snapshot(&c.join(cmd.name())), "{} echo", cmd.name());
    }
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    run_with(Command::TrainLm, &[SMALL_LM, &["steps=0", "seed=4"]].concat(), tmp.path()).unwrap();

    let corpus = Corpus::from_text(&markov_text(0, 3000), 0.1).unwrap();
    let cfg = ModelConfig {
        layers: 2,
        heads: 2,
        head_dim: 4,
        embed_dim: 8,
        ff_dim: 16,
        context: 16,
        seed: 4,
        ..ModelConfig::default_with_vocab(corpus.vocab.len())
    };
    let model = Model::new(cfg).unwrap();
    let adam = AdamState::new(&model);
    let mut expect = Vec::new();
    save_checkpoint(&mut expect, &Checkpoint { model, adam, vocab: corpus.vocab, train: TrainConfig::default() }).unwrap();
    assert_eq!(fs::read(tmp.path().join("checkpoint.txt")).unwrap(), expect);
    assert_eq!(fs::read_to_string(tmp.path().join("loss.csv")).unwrap(), "step,loss\n");
}

#[test]
fn resume_continues_a_single_run_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let (whole, first, second) = (tmp.path().join("whole"), tmp.path().join("first"), tmp.path().join("second"));
    run_with(Command::TrainLm, &[SMALL_LM, &["steps=6"]].concat(), &whole).unwrap();
    run_with(Command::TrainLm, &[SMALL_LM, &["steps=3"]].concat(), &first).unwrap();
    let resume = format!("resume={}", first.join("checkpoint.txt").display());
    run_with(Command::TrainLm, &[SMALL_LM, &["steps=3", resume.as_str()]].concat(), &second).unwrap();

    let read = |d: &Path, f: &str| fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(read(&whole, "checkpoint.txt"), read(&second, "checkpoint.txt"));
    assert_eq!(read(&whole, "eval.csv"), read(&second, "eval.csv"));
    let whole_loss: Vec<String> = read(&whole, "loss.csv").lines().map(String::from).collect();
    let first_loss: Vec<String> = read(&first, "loss.csv").lines().map(String::from).collect();
    let second_loss: Vec<String> = read(&second, "loss.csv").lines().map(String::from).collect();
    assert_eq!(whole_loss[1..4], first_loss[1..]);
    assert_eq!(whole_loss[4..], second_loss[1..]);

    let ck = load_checkpoint(read(&second, "checkpoint.txt").as_bytes()).unwrap();
    assert_eq!(ck.adam.step, 6);
}

#[test]
fn resume_rejects_mismatched_config() {
    let tmp = tempfile::tempdir().unwrap();
    run_with(Command::TrainLm, &[SMALL_LM, &["steps=1"]].concat(), &tmp.path().join("a")).unwrap();
    let resume = format!("resume={}", tmp.path().join("a/checkpoint.txt").display());
    let err = run_with(Command::TrainLm, &[SMALL_LM, &["steps=1", "lr=0.01", resume.as_str()]].concat(), &tmp.path().join("b"));
    assert!(matches!(err, Err(CliError::Usage(_))));
}

#[test]
fn corruption_only_changes_the_corrupted_column() {
    let tmp = tempfile::tempdir().unwrap();
    let (off, on) = (tmp.path().join("off"), tmp.path().join("on"));
    run_with(Command::TrainLm, &[SMALL_LM, &["steps=2", "corrupt=false"]].concat(), &off).unwrap();
    run_with(Command::TrainLm, &[SMALL_LM, &["steps=2", "corrupt=true", "corruption_rate=0.5"]].concat(), &on).unwrap();
    let read = |d: &Path, f: &str| fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(read(&off, "loss.csv"), read(&on, "loss.csv"));
    assert_eq!(read(&off, "checkpoint.txt"), read(&on, "checkpoint.txt"));
    let (a, b) = (read(&off, "eval.csv"), read(&on, "eval.csv"));
    let (ra, rb): (Vec<&str>, Vec<&str>) = (a.lines().nth(1).unwrap().split(',').collect(), b.lines().nth(1).unwrap().split(',').collect());
    assert_eq!(ra[..2], rb[..2]);
    assert_eq!(ra[2], "");
    assert!(rb[2].parse::<f64>().unwrap() > 1.0);
}

#[test]
fn diagnose_outputs_have_fixed_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let ck_dir = tmp.path().join("ck");
    run_with(Command::TrainLm, &[SMALL_LM, &["steps=2", "layers=3"]].concat(), &ck_dir).unwrap();
    let ck = format!("checkpoint={}", ck_dir.join("checkpoint.txt").display());
    let out = tmp.path().join("diag");
    run_with(Command::Diagnose, &[SMALL_LM[6], "windows=2", "eval_windows=2", "robust_samples=1", "epsilons=0.1,1", ck.as_str()], &out).unwrap();

    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("metric,layer,value"));
    let metrics: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    for m in ["cosine_similarity", "head_distance", "robustness_eps_0.1", "robustness_eps_1"] {
        assert_eq!(metrics.iter().filter(|x| **x == m).count(), 3, "{m}");
    }
    assert_eq!(metrics.len(), 12);

    for l in 0..3 {
        for h in 0..2 {
            let text = fs::read_to_string(out.join(format!("heatmaps/layer{l}_head{h}.csv"))).unwrap();
            let mut rows = text.lines();
            assert!(rows.next().unwrap().starts_with('#'));
            assert!(rows.next().unwrap().starts_with("query,k0"));
            for row in rows {
                let v: Vec<f64> = row.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
                let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
                assert!(lo == 0.0 && (hi == 1.0 || hi == 0.0), "{row}");
            }
        }
    }
}

#[test]
fn diagnose_without_checkpoint_is_a_file_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = format!("checkpoint={}", tmp.path().join("nope.txt").display());
    let err = run_with(Command::Diagnose, &[missing.as_str()], &tmp.path().join("out")).unwrap_err();
    assert!(matches!(err, CliError::File { .. }), "{err}");
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_elliptical"))
}

#[test]
fn verify_exit_status_follows_suites() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = binary().args(["verify", "--out"]).arg(tmp.path().join("ok")).output().unwrap();
    assert!(ok.status.success());
    let stdout = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 10);

    let bad = binary()
        .args(["verify", "--set", "fault=kappa-off-by-one", "--out"])
        .arg(tmp.path().join("bad"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let stdout = String::from_utf8(bad.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("FAIL masa-sensitivity")), "{stdout}");
}

#[test]
fn binary_reports_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("c.conf");
    fs::write(&conf, "seed = 1\n").unwrap();
    let out = binary().args(["nw-sparse", "--config"]).arg(&conf).env("ELLIPTICAL_OUT_ROOT", tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("`n`"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = binary().args(["verify"]).env("ELLIPTICAL_OUT_ROOT", tmp.path()).output().unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("verify/summary.txt").exists());
    assert!(tmp.path().join("verify/config.txt").exists());
}
