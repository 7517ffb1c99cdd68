//! The diagonal Mahalanobis metric, its scaling modes, the κ sensitivity
//! coefficients and the query-perturbation robustness bound built from them.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{norm2, Matrix, Rng};

/// Default lower clamp on metric weights; keeps `M` positive definite.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalingMode {
    /// Divide by the largest estimate so the most variable direction has weight 1.
    Maxscale,
    /// Divide by the mean estimate; entries above 1 are kept.
    Meanscale,
    /// Clamp only.
    Unscaled,
    /// `M = I`, estimates ignored.
    Identity,
    /// Fresh uniform `[0, 1]` weights, maxscaled; estimates ignored.
    Random,
}

impl ScalingMode {
    pub const ALL: [ScalingMode; 5] = [
        ScalingMode::Maxscale,
        ScalingMode::Meanscale,
        ScalingMode::Unscaled,
        ScalingMode::Identity,
        ScalingMode::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScalingMode::Maxscale => "maxscale",
            ScalingMode::Meanscale => "meanscale",
            ScalingMode::Unscaled => "unscaled",
            ScalingMode::Identity => "identity",
            ScalingMode::Random => "random",
        }
    }
}

impl fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScalingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScalingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown scaling mode `{s}`")))
    }
}

/// Diagonal of the metric `M` together with how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipticalWeights {
    m: Vec<f64>,
    mode: ScalingMode,
    floor: f64,
}

impl EllipticalWeights {
    pub fn identity(dim: usize) -> Self {
        Self { m: vec![1.0; dim], mode: ScalingMode::Identity, floor: DEFAULT_FLOOR }
    }

    /// Explicit weights, recorded as `Unscaled`. Every entry must be at least `floor`.
    pub fn new(m: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::Parameter(format!("floor must be positive, got {floor}")));
        }
        if let Some(bad) = m.iter().find(|&&v| !(v >= floor) || !v.is_finite()) {
            return Err(Error::Parameter(format!("metric weight {bad} below floor {floor}")));
        }
        Ok(Self { m, mode: ScalingMode::Unscaled, floor })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn mode(&self) -> ScalingMode {
        self.mode
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn is_identity(&self) -> bool {
        self.m.iter().all(|&v| v == 1.0)
    }

    /// Same mode and floor, new dimension-appropriate identity.
    pub fn with_mode(mode: ScalingMode, floor: f64, dim: usize) -> Self {
        Self { m: vec![1.0; dim], mode, floor }
    }
}

/// Turns raw non-negative variability estimates into metric weights.
///
/// All-zero input yields identity weights regardless of `mode`.
pub fn apply_scaling(raw: &[f64], mode: ScalingMode, floor: f64, rng: &mut Rng) -> Result<EllipticalWeights> {
    if !(floor > 0.0) {
        return Err(Error::Parameter(format!("floor must be positive, got {floor}")));
    }
    if let Some(bad) = raw.iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Parameter(format!("raw variability must be finite and non-negative, got {bad}")));
    }
    let d = raw.len();
    if raw.iter().all(|&v| v == 0.0) {
        return Ok(EllipticalWeights { m: vec![1.0; d], mode: ScalingMode::Identity, floor });
    }
    let clamp = |v: f64| v.max(floor);
    let m = match mode {
        ScalingMode::Maxscale => {
            let max = raw.iter().copied().fold(0.0, f64::max);
            raw.iter().map(|&v| clamp(v / max)).collect()
        }
        ScalingMode::Meanscale => {
            let mean = raw.iter().sum::<f64>() / d as f64;
            raw.iter().map(|&v| clamp(v / mean)).collect()
        }
        ScalingMode::Unscaled => raw.iter().map(|&v| clamp(v)).collect(),
        ScalingMode::Identity => vec![1.0; d],
        ScalingMode::Random => {
            let draws = rng.uniform_vec(d, 0.0, 1.0);
            let max = draws.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                draws.iter().map(|&v| clamp(v / max)).collect()
            } else {
                vec![1.0; d]
            }
        }
    };
    Ok(EllipticalWeights { m, mode, floor })
}

/// `sqrt((q - k)ᵀ M (q - k))`
pub fn mahalanobis_distance(q: &[f64], k: &[f64], w: &EllipticalWeights) -> Result<f64> {
    Ok(squared_mahalanobis(q, k, w.as_slice())?.sqrt())
}

pub(crate) fn squared_mahalanobis(q: &[f64], k: &[f64], m: &[f64]) -> Result<f64> {
    if q.len() != k.len() || q.len() != m.len() {
        return shape_err(format!(
            "distance between lengths {} and {} with {} weights",
            q.len(),
            k.len(),
            m.len()
        ));
    }
    Ok(q.iter().zip(k).zip(m).map(|((a, b), w)| w * (a - b) * (a - b)).sum())
}

/// κ coefficients, stored `D x N`: entry `(i, j)` bounds how strongly the
/// `j`-th Mahalanobis-softmax output reacts to query coordinate `i`, per unit of `m_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaMatrix(Matrix);

impl KappaMatrix {
    pub fn get(&self, dim: usize, key: usize) -> f64 {
        self.0[(dim, key)]
    }

    pub fn dims(&self) -> usize {
        self.0.rows()
    }

    pub fn keys(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Deliberate defects for negative-control runs of the verification suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KappaFault {
    /// Reads the coefficient of the next input dimension (`i + 1 mod D`).
    DimensionOffByOne,
}

/// `κ_ij = |k_j^i| / 4 + Σ_{s≠j} |k_s^i|` for keys given as rows of an `N x D` matrix.
pub fn compute_kappa(keys: &Matrix) -> KappaMatrix {
    let (n, d) = keys.shape();
    let mut out = Matrix::zeros(d, n);
    for i in 0..d {
        for j in 0..n {
            let mut others = 0.0;
            for s in 0..n {
                if s != j {
                    others += keys[(s, i)].abs();
                }
            }
            out[(i, j)] = keys[(j, i)].abs() / 4.0 + others;
        }
    }
    KappaMatrix(out)
}

pub fn compute_kappa_with(keys: &Matrix, fault: Option<KappaFault>) -> KappaMatrix {
    let k = compute_kappa(keys);
    match fault {
        None => k,
        Some(KappaFault::DimensionOffByOne) => {
            let (d, n) = k.0.shape();
            KappaMatrix(Matrix::from_fn(d, n, |i, j| k.0[((i + 1) % d, j)]))
        }
    }
}

/// `Σ_j sqrt(tr(K_j² M²)) ‖v_j‖` with `K_j = diag(κ_1j, …, κ_Dj)`.
///
/// Bounds `‖ĥ(q) − ĥ(q + ε)‖ / ‖ε‖` for `ĥ(q) = Σ_j MaSA_j(q) v_j` at unit temperature.
pub fn robustness_bound(keys: &Matrix, values: &Matrix, w: &EllipticalWeights) -> Result<f64> {
    let kappa = compute_kappa(keys);
    robustness_bound_from_kappa(&kappa, values, w.as_slice())
}

pub fn robustness_bound_from_kappa(kappa: &KappaMatrix, values: &Matrix, m: &[f64]) -> Result<f64> {
    let (d, n) = kappa.0.shape();
    if values.rows() != n {
        return shape_err(format!("{n} keys but {} values", values.rows()));
    }
    if m.len() != d {
        return shape_err(format!("{d}-dim keys but {} metric weights", m.len()));
    }
    let mut total = 0.0;
    for j in 0..n {
        let tr: f64 = (0..d).map(|i| (kappa.0[(i, j)] * m[i]).powi(2)).sum();
        total += tr.sqrt() * norm2(values.row(j));
    }
    Ok(total)
}
