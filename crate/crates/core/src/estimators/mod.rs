//! Estimators of coordinate-wise variability `E_μ ‖J_f(k) e_i‖₁`.
//!
//! * [`estimate_overlayers`] mean absolute change of value coordinates between
//!   consecutive layers, the cheap in-layer estimator.
//! * [`estimate_consistent`] centered differences of a materialised predictor.
//! * [`oracle_variability`] Monte Carlo over finite-difference Jacobians of a
//!   known function; ground truth for tests.

pub mod bench;
mod synthetic;

pub use synthetic::{Marginal, SinTerm, SyntheticFunction};

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{finite_diff_jacobian, Matrix, Rng};

/// Default number of Monte Carlo points for the oracle.
pub const ORACLE_SAMPLES: usize = 200;
/// Default finite-difference step for the oracle.
pub const ORACLE_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    OverLayers,
    Consistent,
    Oracle,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::OverLayers => "overlayers",
            EstimatorKind::Consistent => "consistent",
            EstimatorKind::Oracle => "oracle",
        })
    }
}

/// Raw (pre-scaling) variability per input coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct VariabilityEstimate {
    pub raw: Vec<f64>,
    pub estimator: EstimatorKind,
    /// `δ` for the over-layers estimator, `t` for the consistent one, the
    /// finite-difference step for the oracle.
    pub step: f64,
}

fn check_pair(v_curr: &Matrix, v_prev: &Matrix, delta: f64) -> Result<()> {
    if v_curr.shape() != v_prev.shape() {
        return shape_err(format!(
            "current values {:?} vs previous values {:?}",
            v_curr.shape(),
            v_prev.shape()
        ));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    if v_curr.rows() == 0 {
        return shape_err("over-layers estimate needs at least one row");
    }
    Ok(())
}

/// `raw_i = (1/N) Σ_n |v_curr[n,i] − v_prev[n,i]| / δ`.
///
/// Operates on plain matrices, so nothing computed here can carry gradient.
pub fn estimate_overlayers(v_curr: &Matrix, v_prev: &Matrix, delta: f64) -> Result<VariabilityEstimate> {
    check_pair(v_curr, v_prev, delta)?;
    let n = v_curr.rows();
    let mut acc = vec![0.0; v_curr.cols()];
    for r in 0..n {
        accumulate_abs_diff(&mut acc, v_curr.row(r), v_prev.row(r), delta);
    }
    let raw = acc.iter().map(|s| s / n as f64).collect();
    Ok(VariabilityEstimate { raw, estimator: EstimatorKind::OverLayers, step: delta })
}

/// Over-layers estimate restricted to each prefix of rows: entry `r` averages
/// rows `0..=r`. The last entry equals [`estimate_overlayers`] bitwise.
pub fn estimate_overlayers_prefix(v_curr: &Matrix, v_prev: &Matrix, delta: f64) -> Result<Vec<Vec<f64>>> {
    check_pair(v_curr, v_prev, delta)?;
    let mut acc = vec![0.0; v_curr.cols()];
    let mut out = Vec::with_capacity(v_curr.rows());
    for r in 0..v_curr.rows() {
        accumulate_abs_diff(&mut acc, v_curr.row(r), v_prev.row(r), delta);
        out.push(acc.iter().map(|s| s / (r + 1) as f64).collect());
    }
    Ok(out)
}

#[inline]
fn accumulate_abs_diff(acc: &mut [f64], curr: &[f64], prev: &[f64], delta: f64) {
    for ((a, c), p) in acc.iter_mut().zip(curr).zip(prev) {
        *a += (c - p).abs() / delta;
    }
}

/// `raw_i = mean_x ‖f(x + t e_i) − f(x − t e_i)‖₁ / 2t` over the rows of `samples`.
pub fn estimate_consistent<F>(f: F, samples: &Matrix, t: f64) -> Result<VariabilityEstimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("locality t must be positive, got {t}")));
    }
    if samples.rows() == 0 {
        return Err(Error::Parameter("consistent estimate needs at least one sample".into()));
    }
    let d = samples.cols();
    let mut acc = vec![0.0; d];
    let mut probe = vec![0.0; d];
    for r in 0..samples.rows() {
        let x = samples.row(r);
        probe.copy_from_slice(x);
        for i in 0..d {
            probe[i] = x[i] + t;
            let plus = f(&probe);
            probe[i] = x[i] - t;
            let minus = f(&probe);
            probe[i] = x[i];
            if plus.len() != minus.len() {
                return shape_err("predictor output length changed between evaluations");
            }
            let mut l1 = 0.0;
            for (p, m) in plus.iter().zip(&minus) {
                if !p.is_finite() || !m.is_finite() {
                    return Err(Error::Evaluation(format!("predictor non-finite near sample {r}, coordinate {i}")));
                }
                l1 += (p - m).abs();
            }
            acc[i] += l1 / (2.0 * t);
        }
    }
    let n = samples.rows() as f64;
    Ok(VariabilityEstimate {
        raw: acc.into_iter().map(|s| s / n).collect(),
        estimator: EstimatorKind::Consistent,
        step: t,
    })
}

/// Monte Carlo of `E_μ ‖J_f(k) e_i‖₁` with `n_mc` draws from `mu` and
/// finite-difference Jacobians (step [`ORACLE_STEP`]).
pub fn oracle_variability(f: &SyntheticFunction, mu: &Marginal, n_mc: usize, rng: &mut Rng) -> Result<VariabilityEstimate> {
    oracle_variability_with_step(f, mu, n_mc, ORACLE_STEP, rng)
}

pub fn oracle_variability_with_step(
    f: &SyntheticFunction,
    mu: &Marginal,
    n_mc: usize,
    h: f64,
    rng: &mut Rng,
) -> Result<VariabilityEstimate> {
    if mu.dim() != f.input_dim() {
        return shape_err(format!("{}-dim marginal for a {}-dim function", mu.dim(), f.input_dim()));
    }
    if n_mc == 0 {
        return Err(Error::Parameter("oracle needs at least one Monte Carlo sample".into()));
    }
    let d = f.input_dim();
    let mut acc = vec![0.0; d];
    for _ in 0..n_mc {
        let k = mu.sample(rng);
        let jac = finite_diff_jacobian(|x| f.eval(x), &k, h)?;
        for (i, a) in acc.iter_mut().enumerate() {
            *a += (0..jac.rows()).map(|r| jac[(r, i)].abs()).sum::<f64>();
        }
    }
    Ok(VariabilityEstimate {
        raw: acc.into_iter().map(|s| s / n_mc as f64).collect(),
        estimator: EstimatorKind::Oracle,
        step: h,
    })
}

/// Keys and noisy values at two consecutive "layers" of the regression data
/// generating process: `k' = k + Δ` with `|Δ_i|` centred on `δ`, and
/// `v = f(k) + ε` with Gaussian `ε` at each layer.
#[derive(Clone, Debug)]
pub struct LayerPair {
    pub keys_prev: Matrix,
    pub keys_next: Matrix,
    pub values_prev: Matrix,
    pub values_next: Matrix,
    /// `f(keys_prev)` and `f(keys_next)` without noise.
    pub clean_prev: Matrix,
    pub clean_next: Matrix,
}

#[derive(Clone, Debug)]
pub struct LayerPairConfig {
    pub n: usize,
    /// Mean absolute key movement per coordinate.
    pub delta: f64,
    /// Relative half-width of the uniform spread of `|Δ_i|` around `δ`.
    pub spread: f64,
    pub noise_std: f64,
}

pub fn simulate_layer_pair(f: &SyntheticFunction, mu: &Marginal, cfg: &LayerPairConfig, rng: &mut Rng) -> Result<LayerPair> {
    if !(cfg.delta > 0.0) || !(0.0..1.0).contains(&cfg.spread) || !(cfg.noise_std >= 0.0) {
        return Err(Error::Parameter(format!("invalid layer-pair config {cfg:?}")));
    }
    let keys_prev = mu.sample_matrix(cfg.n, rng);
    let d = keys_prev.cols();
    let keys_next = Matrix::from_fn(cfg.n, d, |i, j| {
        let mag = cfg.delta * rng.uniform_range(1.0 - cfg.spread, 1.0 + cfg.spread);
        keys_prev[(i, j)] + rng.sign() * mag
    });
    let clean_prev = f.eval_rows(&keys_prev)?;
    let clean_next = f.eval_rows(&keys_next)?;
    let values_prev = Matrix::from_fn(cfg.n, clean_prev.cols(), |i, j| clean_prev[(i, j)] + cfg.noise_std * rng.normal());
    let values_next = Matrix::from_fn(cfg.n, clean_next.cols(), |i, j| clean_next[(i, j)] + cfg.noise_std * rng.normal());
    Ok(LayerPair { keys_prev, keys_next, values_prev, values_next, clean_prev, clean_next })
}
