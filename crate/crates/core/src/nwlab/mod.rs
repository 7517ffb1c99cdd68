//! Nadaraya-Watson regression with Euclidean or diagonal-Mahalanobis Gaussian
//! kernels, bandwidth selection by cross-validation, and the experiments that
//! compare the two estimators.

mod experiments;

pub use experiments::{
    check_lipschitz_transfer, run_edge_preservation_experiment, run_sparse_mse_experiment, EdgeConfig,
    EdgeDistance, EdgeReport, MSEReport, NWMethod, SparseMseConfig, SparseTruth, WeightSource,
};

use crate::error::{shape_err, Error, Result};
use crate::estimators::{Marginal, SyntheticFunction};
use crate::metric::{squared_mahalanobis, EllipticalWeights};
use crate::numerics::{Matrix, Rng};

/// Noisy samples `v = f(k) + ε` of a known function.
#[derive(Clone, Debug)]
pub struct NWDataset {
    pub keys: Matrix,
    pub values: Matrix,
    pub noise_std: f64,
    pub truth: SyntheticFunction,
}

impl NWDataset {
    pub fn sample(truth: &SyntheticFunction, mu: &Marginal, n: usize, noise_std: f64, rng: &mut Rng) -> Result<Self> {
        if !(noise_std >= 0.0) {
            return Err(Error::Parameter(format!("noise std must be non-negative, got {noise_std}")));
        }
        if mu.dim() != truth.input_dim() {
            return shape_err(format!("{}-dim marginal for a {}-dim function", mu.dim(), truth.input_dim()));
        }
        let keys = mu.sample_matrix(n, rng);
        let clean = truth.eval_rows(&keys)?;
        let values = Matrix::from_fn(n, clean.cols(), |i, j| clean[(i, j)] + noise_std * rng.normal());
        Ok(Self { keys, values, noise_std, truth: truth.clone() })
    }

    pub fn from_parts(keys: Matrix, values: Matrix, noise_std: f64, truth: SyntheticFunction) -> Result<Self> {
        if keys.rows() != values.rows() {
            return shape_err(format!("{} keys but {} values", keys.rows(), values.rows()));
        }
        if keys.cols() != truth.input_dim() || values.cols() != truth.output_dim() {
            return shape_err("dataset shape does not match the truth function");
        }
        Ok(Self { keys, values, noise_std, truth })
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }
}

/// `Σ_j v_j exp(−d(q,k_j)²/2σ²) / Σ_j exp(−d(q,k_j)²/2σ²)` with `σ` the bandwidth.
pub fn nw_estimate(query: &[f64], data: &NWDataset, bandwidth: f64, w: &EllipticalWeights) -> Result<Vec<f64>> {
    nw_point(query, &data.keys, &data.values, bandwidth, w.as_slice())
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(())
}

/// NW estimate at `query` from raw key/value matrices with diagonal weights `m`.
pub fn nw_point(query: &[f64], keys: &Matrix, values: &Matrix, bandwidth: f64, m: &[f64]) -> Result<Vec<f64>> {
    check_bandwidth(bandwidth)?;
    if keys.rows() == 0 {
        return Err(Error::Parameter("Nadaraya-Watson estimate on an empty dataset".into()));
    }
    if keys.rows() != values.rows() {
        return shape_err(format!("{} keys but {} values", keys.rows(), values.rows()));
    }
    let scale = -0.5 / (bandwidth * bandwidth);
    let mut logw = Vec::with_capacity(keys.rows());
    for j in 0..keys.rows() {
        logw.push(scale * squared_mahalanobis(query, keys.row(j), m)?);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; values.cols()];
    let mut total = 0.0;
    for (j, lw) in logw.iter().enumerate() {
        let wj = (lw - max).exp();
        total += wj;
        for (o, v) in out.iter_mut().zip(values.row(j)) {
            *o += wj * v;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

/// Row-wise [`nw_estimate`] for a batch of queries.
pub fn nw_predict(queries: &Matrix, keys: &Matrix, values: &Matrix, bandwidth: f64, m: &[f64]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(queries.rows() * values.cols());
    for i in 0..queries.rows() {
        data.extend(nw_point(queries.row(i), keys, values, bandwidth, m)?);
    }
    Matrix::new(queries.rows(), values.cols(), data)
}

/// `count` log-spaced bandwidths from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Default bandwidth grid, 12 log-spaced points over `[0.05, 2]`.
pub fn default_bandwidth_grid() -> Vec<f64> {
    log_grid(0.05, 2.0, 12)
}

/// `k`-fold cross-validated squared error for each bandwidth in `grid`.
pub fn cv_errors(keys: &Matrix, values: &Matrix, m: &[f64], grid: &[f64], folds: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let n = keys.rows();
    if folds < 2 || folds > n {
        return Err(Error::Parameter(format!("{folds} folds for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut errors = vec![0.0; grid.len()];
    for f in 0..folds {
        let (held, kept): (Vec<usize>, Vec<usize>) = (0..n).partition(|&p| p % folds == f);
        let pick = |src: &Matrix, idx: &[usize]| Matrix::from_fn(idx.len(), src.cols(), |r, c| src[(order[idx[r]], c)]);
        let (tk, tv) = (pick(keys, &kept), pick(values, &kept));
        let (hk, hv) = (pick(keys, &held), pick(values, &held));
        for (e, &h) in errors.iter_mut().zip(grid) {
            let pred = nw_predict(&hk, &tk, &tv, h, m)?;
            *e += pred.sub(&hv)?.data().iter().map(|x| x * x).sum::<f64>();
        }
    }
    let total = (n * values.cols()) as f64;
    Ok(errors.into_iter().map(|e| e / total).collect())
}

/// Bandwidth with the smallest cross-validated error; ties go to the smaller bandwidth.
pub fn select_bandwidth(keys: &Matrix, values: &Matrix, m: &[f64], grid: &[f64], folds: usize, rng: &mut Rng) -> Result<f64> {
    let errors = cv_errors(keys, values, m, grid, folds, rng)?;
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    grid.get(best).copied().ok_or_else(|| Error::Parameter("empty bandwidth grid".into()))
}
