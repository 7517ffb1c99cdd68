//! Benchmarks of the variability estimators against ground truth on the
//! separable sinusoid catalog.

use rayon::prelude::*;

use super::{estimate_consistent, estimate_overlayers, oracle_variability, simulate_layer_pair, LayerPairConfig, Marginal, SyntheticFunction};
use crate::error::{Error, Result};
use crate::io::ReportRow;
use crate::numerics::Rng;
use crate::stats::{kendall_tau, log_log_slope, mean};

const TAG_RANKING: u64 = 0xb3;
const TAG_RATE: u64 = 0xc4;

/// Lowest over-layers Kendall-τ against the oracle seen across 20 seeds of
/// [`BenchConfig::default`] (13/15), minus 0.05.
pub const KENDALL_THRESHOLD: f64 = 13.0 / 15.0 - 0.05;

/// Separable sinusoids whose coordinates have distinct variabilities on
/// `[-3, 3]^dim`.
pub fn separable_catalog(dim: usize) -> Vec<SyntheticFunction> {
    let idx: Vec<f64> = (0..dim).map(|i| i as f64).collect();
    let decaying = idx.iter().map(|i| 1.0 / (i + 1.0)).collect::<Vec<_>>();
    let rising = idx.iter().map(|i| 0.5 + 0.25 * i).collect::<Vec<_>>();
    let alternating = idx.iter().map(|i| if *i as usize % 2 == 0 { 1.0 - 0.1 * i } else { 0.1 + 0.05 * i }).collect::<Vec<_>>();
    let ones = vec![1.0; dim];
    let zeros = vec![0.0; dim];
    vec![
        SyntheticFunction::SeparableSinusoid { amp: decaying.clone(), freq: ones.clone(), phase: zeros.clone() },
        SyntheticFunction::SeparableSinusoid { amp: ones.clone(), freq: rising, phase: zeros },
        SyntheticFunction::SeparableSinusoid { amp: alternating, freq: ones, phase: idx.iter().map(|i| 0.5 * i).collect() },
        SyntheticFunction::SeparableSinusoid {
            amp: decaying.iter().rev().copied().collect(),
            freq: vec![0.7; dim],
            phase: vec![0.3; dim],
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub dim: usize,
    /// Keys per simulated layer pair and sample points for the consistent estimator.
    pub n: usize,
    /// Mean absolute key movement between layers.
    pub delta: f64,
    pub spread: f64,
    pub noise_std: f64,
    /// Step of the consistent estimator.
    pub t: f64,
    pub oracle_samples: usize,
    pub seeds: usize,
    /// Sample sizes for the consistency-rate fit.
    pub rate_ns: Vec<usize>,
    pub rate_seeds: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dim: 6,
            n: 2000,
            delta: 0.05,
            spread: 0.5,
            noise_std: 0.01,
            t: 0.01,
            oracle_samples: 2000,
            seeds: 20,
            rate_ns: vec![100, 1_000, 10_000, 100_000],
            rate_seeds: 10,
            seed: 0,
        }
    }
}

/// Kendall-τ of each estimator against the oracle, per seed and catalog function.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub seed: u64,
    pub function: usize,
    pub overlayers_tau: f64,
    pub consistent_tau: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rankings: Vec<RankingResult>,
    /// `(n, mean absolute error)` of the consistent estimator against the
    /// closed form on `(sin x₁, cos x₂, 0, …)`.
    pub rate: Vec<(usize, f64)>,
    pub rate_slope: f64,
}

impl BenchReport {
    pub fn min_overlayers_tau(&self) -> f64 {
        self.rankings.iter().map(|r| r.overlayers_tau).fold(f64::INFINITY, f64::min)
    }

    pub fn rows(&self, experiment: &str, n: usize) -> Vec<ReportRow> {
        let row = |estimator: &str, seed: Option<u64>, n: usize, metric: String, value: f64| ReportRow {
            experiment: experiment.to_string(),
            estimator: estimator.to_string(),
            seed,
            n,
            bandwidth: None,
            metric,
            value,
        };
        let mut out = Vec::new();
        for r in &self.rankings {
            let metric = format!("kendall_tau_f{}", r.function);
            out.push(row("overlayers", Some(r.seed), n, metric.clone(), r.overlayers_tau));
            out.push(row("consistent", Some(r.seed), n, metric, r.consistent_tau));
        }
        for &(rn, err) in &self.rate {
            out.push(row("consistent", None, rn, "abs_error".into(), err));
        }
        out.push(row("consistent", None, n, "rate_slope".into(), self.rate_slope));
        out.push(row("overlayers", None, n, "kendall_tau_min".into(), self.min_overlayers_tau()));
        out
    }
}

/// Ranks coordinate variabilities with the over-layers and consistent
/// estimators on every catalog function and compares with the oracle.
pub fn ranking_fidelity(cfg: &BenchConfig) -> Result<Vec<RankingResult>> {
    if cfg.dim < 2 || cfg.n == 0 || cfg.seeds == 0 || cfg.oracle_samples == 0 {
        return Err(Error::Parameter("dim ≥ 2 and positive n, seeds, oracle_samples required".into()));
    }
    let catalog = separable_catalog(cfg.dim);
    let mu = Marginal::uniform(cfg.dim, -3.0, 3.0);
    let layer = LayerPairConfig { n: cfg.n, delta: cfg.delta, spread: cfg.spread, noise_std: cfg.noise_std };
    let jobs: Vec<(u64, usize)> = (0..cfg.seeds as u64).flat_map(|s| (0..catalog.len()).map(move |f| (s, f))).collect();
    jobs.into_par_iter()
        .map(|(s, fi)| {
            let f = &catalog[fi];
            let rng = Rng::derive(cfg.seed, &[TAG_RANKING, s, fi as u64]);
            let oracle = oracle_variability(f, &mu, cfg.oracle_samples, &mut rng.fork(1))?;
            let pair = simulate_layer_pair(f, &mu, &layer, &mut rng.fork(2))?;
            let over = estimate_overlayers(&pair.values_next, &pair.values_prev, cfg.delta)?;
            let cons = estimate_consistent(|x| f.eval(x), &pair.keys_prev, cfg.t)?;
            Ok(RankingResult {
                seed: s,
                function: fi,
                overlayers_tau: kendall_tau(&over.raw, &oracle.raw),
                consistent_tau: kendall_tau(&cons.raw, &oracle.raw),
            })
        })
        .collect()
}

/// Seed-mean L1 error of the consistent estimator against the closed form on
/// `(sin x₁, cos x₂, 0)` for each sample size, and the log-log slope.
pub fn consistency_rate(ns: &[usize], t: f64, seeds: usize, seed: u64) -> Result<(Vec<(usize, f64)>, f64)> {
    if ns.len() < 2 || seeds == 0 {
        return Err(Error::Parameter("need at least two sample sizes and one seed".into()));
    }
    let f = SyntheticFunction::separable(vec![1.0, 1.0, 0.0], vec![1.0; 3], vec![0.0, std::f64::consts::FRAC_PI_2, 0.0])?;
    let mu = Marginal::uniform(3, -3.0, 3.0);
    let truth = f.analytic_variability(&mu).expect("closed form for separable sinusoid");
    let errors: Vec<(usize, f64)> = ns
        .iter()
        .map(|&n| -> Result<_> {
            let per_seed: Vec<f64> = (0..seeds as u64)
                .into_par_iter()
                .map(|s| -> Result<f64> {
                    let mut rng = Rng::derive(seed, &[TAG_RATE, n as u64, s]);
                    let samples = mu.sample_matrix(n, &mut rng);
                    let est = estimate_consistent(|x| f.eval(x), &samples, t)?;
                    Ok(est.raw.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum())
                })
                .collect::<Result<_>>()?;
            Ok((n, mean(&per_seed)))
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = errors.iter().map(|e| e.0 as f64).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.1).collect();
    Ok((errors, log_log_slope(&xs, &ys)))
}

pub fn run_estimator_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let rankings = ranking_fidelity(cfg)?;
    let (rate, rate_slope) = consistency_rate(&cfg.rate_ns, cfg.t, cfg.rate_seeds, cfg.seed)?;
    Ok(BenchReport { rankings, rate, rate_slope })
}
