use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::{nw_point, nw_predict, select_bandwidth, NWDataset};
use crate::error::{shape_err, Error, Result};
use crate::estimators::{estimate_consistent, oracle_variability, Marginal, SyntheticFunction, ORACLE_SAMPLES};
use crate::io::ReportRow;
use crate::metric::{apply_scaling, squared_mahalanobis, EllipticalWeights, ScalingMode, DEFAULT_FLOOR};
use crate::numerics::{norm2, Matrix, Rng};
use crate::stats::{mean, standard_error};

const TAG_SPARSE: u64 = 0x5a;
const TAG_EDGE: u64 = 0xed;
const FORK_CV: u64 = 1;
const FORK_WEIGHTS: u64 = 2;
const FORK_TEST: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NWMethod {
    Euclidean,
    Elliptical,
}

impl NWMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            NWMethod::Euclidean => "euclidean",
            NWMethod::Elliptical => "elliptical",
        }
    }
}

impl fmt::Display for NWMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NWMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(NWMethod::Euclidean),
            "elliptical" => Ok(NWMethod::Elliptical),
            _ => Err(Error::Parameter(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Where the elliptical estimator's metric comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightSource {
    /// Centered differences of a Euclidean pilot fit on the training data.
    Pilot { t: f64 },
    /// Centered differences of the noise-free truth.
    Truth { t: f64 },
    /// Monte Carlo over finite-difference Jacobians of the truth.
    Oracle,
}

impl fmt::Display for WeightSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSource::Pilot { .. } => f.write_str("pilot"),
            WeightSource::Truth { .. } => f.write_str("truth"),
            WeightSource::Oracle => f.write_str("oracle"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SparseTruth {
    /// `sin(x_1)`; every other coordinate is irrelevant.
    SparseFirst,
    /// `Σ_i sin(x_i)`, the null case.
    EqualVariability,
    /// Identically zero.
    Constant,
}

impl SparseTruth {
    pub fn as_str(self) -> &'static str {
        match self {
            SparseTruth::SparseFirst => "sparse",
            SparseTruth::EqualVariability => "equal",
            SparseTruth::Constant => "constant",
        }
    }

    pub fn function(self, dim: usize) -> SyntheticFunction {
        match self {
            SparseTruth::SparseFirst => SyntheticFunction::sparse_first_coordinate(dim, 1.0, 1.0),
            SparseTruth::EqualVariability => SyntheticFunction::equal_variability(dim, 1.0, 1.0),
            SparseTruth::Constant => SyntheticFunction::constant(dim, vec![0.0]),
        }
    }
}

impl FromStr for SparseTruth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SparseTruth::SparseFirst, SparseTruth::EqualVariability, SparseTruth::Constant]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown truth `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMseConfig {
    pub dim: usize,
    pub n: usize,
    pub noise_std: f64,
    pub seeds: usize,
    pub test_queries: usize,
    pub truth: SparseTruth,
    pub weight_source: WeightSource,
    pub scaling: ScalingMode,
    /// Fixed bandwidth for both estimators; `None` selects one per estimator by cross-validation.
    pub bandwidth: Option<f64>,
    pub folds: usize,
    pub grid: Vec<f64>,
    /// Keys are uniform on `[-half_width, half_width]^dim`.
    pub half_width: f64,
    /// Training points at which the pilot fit is differenced.
    pub pilot_points: usize,
    pub seed: u64,
}

impl Default for SparseMseConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            n: 500,
            noise_std: 0.3,
            seeds: 20,
            test_queries: 500,
            truth: SparseTruth::SparseFirst,
            weight_source: WeightSource::Pilot { t: 0.5 },
            scaling: ScalingMode::Maxscale,
            bandwidth: None,
            folds: 5,
            grid: super::default_bandwidth_grid(),
            half_width: 3.0,
            pilot_points: 200,
            seed: 0,
        }
    }
}

/// Held-out MSE of one estimator across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct MSEReport {
    pub method: NWMethod,
    pub n: usize,
    pub per_seed_mse: Vec<f64>,
    pub bandwidths: Vec<f64>,
    /// Metric weights used at each seed (all ones for the Euclidean estimator).
    pub weights: Vec<Vec<f64>>,
    pub mse: f64,
    pub standard_error: f64,
}

impl MSEReport {
    fn from_seeds(method: NWMethod, n: usize, per_seed: Vec<(f64, f64, Vec<f64>)>) -> Self {
        let per_seed_mse: Vec<f64> = per_seed.iter().map(|s| s.0).collect();
        Self {
            method,
            n,
            mse: mean(&per_seed_mse),
            standard_error: standard_error(&per_seed_mse),
            bandwidths: per_seed.iter().map(|s| s.1).collect(),
            weights: per_seed.into_iter().map(|s| s.2).collect(),
            per_seed_mse,
        }
    }

    pub fn seeds(&self) -> usize {
        self.per_seed_mse.len()
    }

    pub fn rows(&self, experiment: &str) -> Vec<ReportRow> {
        let row = |seed, bandwidth, metric: &str, value| ReportRow {
            experiment: experiment.to_string(),
            estimator: self.method.to_string(),
            seed,
            n: self.n,
            bandwidth,
            metric: metric.to_string(),
            value,
        };
        let mut out: Vec<ReportRow> = self
            .per_seed_mse
            .iter()
            .zip(&self.bandwidths)
            .enumerate()
            .map(|(s, (&mse, &bw))| row(Some(s as u64), Some(bw), "mse", mse))
            .collect();
        out.push(row(None, None, "mse_mean", self.mse));
        out.push(row(None, None, "mse_se", self.standard_error));
        out
    }
}

fn check_grid(bandwidth: Option<f64>, grid: &[f64], folds: usize, n: usize) -> Result<()> {
    match bandwidth {
        Some(h) if !(h > 0.0) => Err(Error::Parameter(format!("bandwidth must be positive, got {h}"))),
        Some(_) => Ok(()),
        None if grid.is_empty() || grid.iter().any(|h| !(*h > 0.0)) => {
            Err(Error::Parameter("bandwidth grid must be non-empty and positive".into()))
        }
        None if folds < 2 || folds > n => Err(Error::Parameter(format!("{folds} folds for {n} samples"))),
        None => Ok(()),
    }
}

fn pick_bandwidth(data: &NWDataset, m: &[f64], bandwidth: Option<f64>, grid: &[f64], folds: usize, rng: &Rng) -> Result<f64> {
    match bandwidth {
        Some(h) => Ok(h),
        // Same fold split for every estimator at a given seed.
        None => select_bandwidth(&data.keys, &data.values, m, grid, folds, &mut rng.fork(FORK_CV)),
    }
}

fn elliptical_weights(
    data: &NWDataset,
    mu: &Marginal,
    source: WeightSource,
    pilot_bandwidth: f64,
    pilot_points: usize,
    scaling: ScalingMode,
    rng: &Rng,
) -> Result<EllipticalWeights> {
    let d = data.keys.cols();
    let mut wrng = rng.fork(FORK_WEIGHTS);
    let raw = match source {
        WeightSource::Pilot { t } => {
            let ones = vec![1.0; d];
            let at = data.keys.slice_rows(0, pilot_points.min(data.len()))?;
            estimate_consistent(|x| nw_point(x, &data.keys, &data.values, pilot_bandwidth, &ones).unwrap_or_default(), &at, t)?
                .raw
        }
        WeightSource::Truth { t } => {
            let at = data.keys.slice_rows(0, pilot_points.min(data.len()))?;
            estimate_consistent(|x| data.truth.eval(x), &at, t)?.raw
        }
        WeightSource::Oracle => oracle_variability(&data.truth, mu, ORACLE_SAMPLES, &mut wrng)?.raw,
    };
    apply_scaling(&raw, scaling, DEFAULT_FLOOR, &mut wrng)
}

fn mse(pred: &Matrix, truth: &Matrix) -> Result<f64> {
    let diff = pred.sub(truth)?;
    Ok(diff.data().iter().map(|x| x * x).sum::<f64>() / diff.data().len() as f64)
}

/// Euclidean and elliptical NW fitted on the same noisy samples of a
/// coordinate-sparse (or null) truth, scored on held-out queries against the
/// noise-free truth. Returns `[euclidean, elliptical]`.
pub fn run_sparse_mse_experiment(cfg: &SparseMseConfig) -> Result<[MSEReport; 2]> {
    if cfg.dim == 0 || cfg.n == 0 || cfg.test_queries == 0 || cfg.seeds == 0 {
        return Err(Error::Parameter("dim, n, test_queries and seeds must be positive".into()));
    }
    if !(cfg.noise_std >= 0.0) || !(cfg.half_width > 0.0) {
        return Err(Error::Parameter("noise_std must be non-negative and half_width positive".into()));
    }
    check_grid(cfg.bandwidth, &cfg.grid, cfg.folds, cfg.n)?;
    let truth = cfg.truth.function(cfg.dim);
    let mu = Marginal::uniform(cfg.dim, -cfg.half_width, cfg.half_width);

    let per_seed: Vec<_> = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|s| -> Result<_> {
            let mut rng = Rng::derive(cfg.seed, &[TAG_SPARSE, s]);
            let data = NWDataset::sample(&truth, &mu, cfg.n, cfg.noise_std, &mut rng)?;
            let queries = mu.sample_matrix(cfg.test_queries, &mut rng.fork(FORK_TEST));
            let clean = truth.eval_rows(&queries)?;

            let ones = vec![1.0; cfg.dim];
            let bw_e = pick_bandwidth(&data, &ones, cfg.bandwidth, &cfg.grid, cfg.folds, &rng)?;
            let mse_e = mse(&nw_predict(&queries, &data.keys, &data.values, bw_e, &ones)?, &clean)?;

            let w = elliptical_weights(&data, &mu, cfg.weight_source, bw_e, cfg.pilot_points, cfg.scaling, &rng)?;
            let m = w.as_slice();
            let bw_m = pick_bandwidth(&data, m, cfg.bandwidth, &cfg.grid, cfg.folds, &rng)?;
            let mse_m = mse(&nw_predict(&queries, &data.keys, &data.values, bw_m, m)?, &clean)?;
            Ok(((mse_e, bw_e, ones), (mse_m, bw_m, m.to_vec())))
        })
        .collect::<Result<_>>()?;

    let (e, m): (Vec<_>, Vec<_>) = per_seed.into_iter().unzip();
    Ok([
        MSEReport::from_seeds(NWMethod::Euclidean, cfg.n, e),
        MSEReport::from_seeds(NWMethod::Elliptical, cfg.n, m),
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeConfig {
    /// Input dimension; only the first coordinate matters.
    pub dim: usize,
    pub n: usize,
    pub noise_std: f64,
    pub seeds: usize,
    /// Keys are uniform on `[-half_width, half_width]^dim`.
    pub half_width: f64,
    /// Queries sit at `∓offset` on the first axis, zero elsewhere.
    pub offset: f64,
    pub below: Vec<f64>,
    pub above: Vec<f64>,
    pub weight_source: WeightSource,
    pub scaling: ScalingMode,
    pub bandwidth: Option<f64>,
    pub folds: usize,
    pub grid: Vec<f64>,
    pub pilot_points: usize,
    /// Order of the two report entries.
    pub methods: [NWMethod; 2],
    pub seed: u64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            n: 400,
            noise_std: 0.1,
            seeds: 20,
            half_width: 1.0,
            offset: 0.1,
            below: vec![1.0, 0.0],
            above: vec![0.0, 1.0],
            weight_source: WeightSource::Pilot { t: 0.25 },
            scaling: ScalingMode::Maxscale,
            bandwidth: None,
            folds: 5,
            grid: super::default_bandwidth_grid(),
            pilot_points: 200,
            methods: [NWMethod::Euclidean, NWMethod::Elliptical],
            seed: 0,
        }
    }
}

impl EdgeConfig {
    pub fn truth(&self) -> SyntheticFunction {
        SyntheticFunction::PiecewiseConstant {
            dim: self.dim,
            axis: 0,
            threshold: 0.0,
            below: self.below.clone(),
            above: self.above.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeDistance {
    pub method: NWMethod,
    /// `‖ĥ(q₁)/‖ĥ(q₁)‖ − ĥ(q₂)/‖ĥ(q₂)‖‖` per seed.
    pub per_seed: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeReport {
    pub results: [EdgeDistance; 2],
    /// Distance between the normalized true values of the two pieces.
    pub truth_distance: f64,
}

impl EdgeReport {
    pub fn get(&self, method: NWMethod) -> Option<&EdgeDistance> {
        self.results.iter().find(|r| r.method == method)
    }

    pub fn rows(&self, experiment: &str, n: usize) -> Vec<ReportRow> {
        let mut out = Vec::new();
        for r in &self.results {
            let row = |seed, bandwidth, metric: &str, value| ReportRow {
                experiment: experiment.to_string(),
                estimator: r.method.to_string(),
                seed,
                n,
                bandwidth,
                metric: metric.to_string(),
                value,
            };
            for (s, (&d, &bw)) in r.per_seed.iter().zip(&r.bandwidths).enumerate() {
                out.push(row(Some(s as u64), Some(bw), "edge_distance", d));
            }
            out.push(row(None, None, "edge_distance_mean", r.mean));
            out.push(row(None, None, "edge_distance_se", r.standard_error));
        }
        out
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = norm2(&v);
    if n > 0.0 { v.into_iter().map(|x| x / n).collect() } else { v }
}

/// Distance between NW estimates at two queries straddling a jump of a
/// piecewise-constant truth, for both estimators.
pub fn run_edge_preservation_experiment(cfg: &EdgeConfig) -> Result<EdgeReport> {
    if cfg.dim == 0 || cfg.n == 0 || cfg.seeds == 0 {
        return Err(Error::Parameter("dim, n and seeds must be positive".into()));
    }
    if cfg.below.len() != cfg.above.len() || cfg.below.is_empty() {
        return shape_err("piece values must be non-empty and of equal length");
    }
    check_grid(cfg.bandwidth, &cfg.grid, cfg.folds, cfg.n)?;
    let truth = cfg.truth();
    let mu = Marginal::uniform(cfg.dim, -cfg.half_width, cfg.half_width);
    let mut q1 = vec![0.0; cfg.dim];
    let mut q2 = vec![0.0; cfg.dim];
    q1[0] = -cfg.offset;
    q2[0] = cfg.offset;

    let per_seed: Vec<[(f64, f64); 2]> = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|s| -> Result<_> {
            let mut rng = Rng::derive(cfg.seed, &[TAG_EDGE, s]);
            let data = NWDataset::sample(&truth, &mu, cfg.n, cfg.noise_std, &mut rng)?;
            let ones = vec![1.0; cfg.dim];
            let bw_e = pick_bandwidth(&data, &ones, cfg.bandwidth, &cfg.grid, cfg.folds, &rng)?;
            let mut out = [(0.0, 0.0); 2];
            for (slot, method) in out.iter_mut().zip(cfg.methods) {
                let (m, bw) = match method {
                    NWMethod::Euclidean => (ones.clone(), bw_e),
                    NWMethod::Elliptical => {
                        let w = elliptical_weights(&data, &mu, cfg.weight_source, bw_e, cfg.pilot_points, cfg.scaling, &rng)?;
                        let bw = pick_bandwidth(&data, w.as_slice(), cfg.bandwidth, &cfg.grid, cfg.folds, &rng)?;
                        (w.as_slice().to_vec(), bw)
                    }
                };
                let h1 = normalized(nw_point(&q1, &data.keys, &data.values, bw, &m)?);
                let h2 = normalized(nw_point(&q2, &data.keys, &data.values, bw, &m)?);
                let dist = norm2(&h1.iter().zip(&h2).map(|(a, b)| a - b).collect::<Vec<_>>());
                *slot = (dist, bw);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let make = |i: usize| {
        let d: Vec<f64> = per_seed.iter().map(|r| r[i].0).collect();
        EdgeDistance {
            method: cfg.methods[i],
            mean: mean(&d),
            standard_error: standard_error(&d),
            bandwidths: per_seed.iter().map(|r| r[i].1).collect(),
            per_seed: d,
        }
    };
    let f1 = normalized(cfg.below.clone());
    let f2 = normalized(cfg.above.clone());
    let truth_distance = norm2(&f1.iter().zip(&f2).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(EdgeReport { results: [make(0), make(1)], truth_distance })
}

/// Checks `‖f(q) − f(k)‖ ≤ (Σ_i G_i/√m_i) d_M(q, k)` on random pairs from `mu`.
///
/// Returns the largest `‖f(q) − f(k)‖/d_M(q, k) − L` observed; non-positive
/// means the inequality held everywhere. Coincident pairs contribute
/// `‖f(q) − f(k)‖`, which is zero.
pub fn check_lipschitz_transfer(
    f: &SyntheticFunction,
    w: &EllipticalWeights,
    mu: &Marginal,
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let g = f
        .column_gradient_bounds()
        .ok_or_else(|| Error::Parameter("function has no known gradient bounds".into()))?;
    if g.len() != w.dim() || mu.dim() != w.dim() {
        return shape_err(format!("{}-dim gradient bounds with {}-dim weights", g.len(), w.dim()));
    }
    let lipschitz: f64 = g.iter().zip(w.as_slice()).map(|(gi, mi)| gi / mi.sqrt()).sum();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_pairs {
        let q = mu.sample(rng);
        let k = mu.sample(rng);
        worst = worst.max(pair_violation(f, w, &q, &k, lipschitz)?);
    }
    Ok(worst)
}

pub(crate) fn pair_violation(f: &SyntheticFunction, w: &EllipticalWeights, q: &[f64], k: &[f64], lipschitz: f64) -> Result<f64> {
    let fq = f.eval(q);
    let fk = f.eval(k);
    let gap = norm2(&fq.iter().zip(&fk).map(|(a, b)| a - b).collect::<Vec<_>>());
    let d = squared_mahalanobis(q, k, w.as_slice())?.sqrt();
    Ok(if d > 0.0 { gap / d - lipschitz } else { gap })
}
