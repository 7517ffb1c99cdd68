use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elliptical_cli::config::parse_override;
use elliptical_cli::{output_dir, run, CliError, Command};

#[derive(Parser)]
#[command(name = "elliptical", version, about = "Elliptical attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Euclidean vs elliptical NW regression on a coordinate-sparse truth.
    NwSparse(Common),
    /// Estimate distance across a jump of a piecewise-constant truth.
    EdgePreserve(Common),
    /// Variability estimators against the oracle on the separable catalog.
    EstimatorBench(Common),
    /// Train the toy character-level transformer.
    TrainLm(Common),
    /// Collapse, head redundancy, robustness and attention heatmaps of a checkpoint.
    Diagnose(Common),
    /// Property suites; exits 1 if any fails.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; the built-in config is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; defaults to `$ELLIPTICAL_OUT_ROOT/<subcommand>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for per-seed parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Print the built-in config and exit.
    #[arg(long)]
    print_config: bool,
}

fn execute(cmd: Command, c: Common) -> Result<bool, CliError> {
    if c.print_config {
        print!("{}", cmd.default_config());
        return Ok(true);
    }
    if let Some(n) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs {n}: {e}")))?;
    }
    let text = match &c.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::file(p, e))?),
        None => None,
    };
    let overrides = c.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    let cfg = cmd.resolve(text.as_deref(), overrides)?;
    let out = output_dir(c.out.as_deref(), cmd);
    let outcome = run(cmd, &cfg, &out)?;
    for l in &outcome.lines {
        println!("{l}");
    }
    println!("outputs in {}", out.display());
    Ok(outcome.passed || cmd != Command::Verify)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Sub::NwSparse(c) => (Command::NwSparse, c),
        Sub::EdgePreserve(c) => (Command::EdgePreserve, c),
        Sub::EstimatorBench(c) => (Command::EstimatorBench, c),
        Sub::TrainLm(c) => (Command::TrainLm, c),
        Sub::Diagnose(c) => (Command::Diagnose, c),
        Sub::Verify(c) => (Command::Verify, c),
    };
    match execute(cmd, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("elliptical {}: {e}", cmd.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
