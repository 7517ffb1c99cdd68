//! Attention kernels.
//!
//! Standard attention scores keys by `q·k / τ`. The elliptical variant scores
//! them by `q·M·k / τ`, with `M` rebuilt on every call from how the head's
//! values moved since the previous layer. The unit-temperature Mahalanobis
//! softmax ([`masa`]) and its closed-form Jacobian back the sensitivity bounds.

use crate::error::{shape_err, Error, Result};
use crate::estimators::{estimate_overlayers, estimate_overlayers_prefix};
use crate::metric::{apply_scaling, EllipticalWeights, ScalingMode, DEFAULT_FLOOR};
use crate::numerics::{dot, matmul, softmax, softmax_in_place, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub head_dim: usize,
    /// Logits are divided by this; `√D` by default.
    pub temperature: f64,
    pub causal: bool,
    /// For [`standard_attention`] these must be identity weights. For
    /// [`elliptical_attention`] only their mode and floor are read.
    pub weights: EllipticalWeights,
}

impl AttentionConfig {
    pub fn new(head_dim: usize) -> Self {
        Self {
            head_dim,
            temperature: (head_dim as f64).sqrt(),
            causal: false,
            weights: EllipticalWeights::identity(head_dim),
        }
    }

    pub fn causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn scaling(mut self, mode: ScalingMode) -> Self {
        self.weights = EllipticalWeights::with_mode(mode, self.weights.floor(), self.head_dim);
        self
    }

    pub fn weights(mut self, weights: EllipticalWeights) -> Self {
        self.weights = weights;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Parameter(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.weights.dim() != self.head_dim {
            return shape_err(format!("{} metric weights for head dim {}", self.weights.dim(), self.head_dim));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    /// `N x D_v`
    pub h: Matrix,
    /// `N x N`, row `i` holds query `i`'s distribution over keys.
    pub attn: Matrix,
    /// Metric used for each query row; a single entry when every row shares it.
    pub metric: Vec<EllipticalWeights>,
}

fn check_qkv(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttentionConfig) -> Result<()> {
    cfg.validate()?;
    if q.cols() != cfg.head_dim || k.cols() != cfg.head_dim {
        return shape_err(format!(
            "queries {:?} and keys {:?} for head dim {}",
            q.shape(),
            k.shape(),
            cfg.head_dim
        ));
    }
    if k.rows() != v.rows() {
        return shape_err(format!("{} keys but {} values", k.rows(), v.rows()));
    }
    if k.rows() == 0 {
        return shape_err("attention over an empty key set");
    }
    if cfg.causal && q.rows() > k.rows() {
        return shape_err(format!("causal attention with {} queries over {} keys", q.rows(), k.rows()));
    }
    Ok(())
}

/// Logits `(q_i ⊙ m_{r(i)})·k_j · (1/τ)` with `-∞` above the diagonal when causal.
/// `metric` holds one weight vector shared by all rows or one per row.
fn scores(q: &Matrix, k: &Matrix, metric: Option<&[EllipticalWeights]>, cfg: &AttentionConfig) -> Matrix {
    let inv = 1.0 / cfg.temperature;
    let (n, nk) = (q.rows(), k.rows());
    let mut out = Matrix::zeros(n, nk);
    let mut scaled = vec![0.0; cfg.head_dim];
    for i in 0..n {
        let qi = q.row(i);
        let row_q: &[f64] = match metric {
            None => qi,
            Some(ms) => {
                let m = if ms.len() == 1 { &ms[0] } else { &ms[i] };
                for ((s, a), w) in scaled.iter_mut().zip(qi).zip(m.as_slice()) {
                    *s = a * w;
                }
                &scaled
            }
        };
        for j in 0..nk {
            out[(i, j)] = if cfg.causal && j > i { f64::NEG_INFINITY } else { dot(row_q, k.row(j)) * inv };
        }
    }
    out
}

fn finish(logits: Matrix, v: &Matrix, metric: Vec<EllipticalWeights>) -> Result<AttentionOutput> {
    let mut attn = logits;
    for i in 0..attn.rows() {
        softmax_in_place(attn.row_mut(i));
    }
    let h = matmul(&attn, v)?;
    Ok(AttentionOutput { h, attn, metric })
}

/// Scaled dot-product logits, exposed for the bitwise identity check.
pub fn standard_logits(q: &Matrix, k: &Matrix, cfg: &AttentionConfig) -> Matrix {
    scores(q, k, None, cfg)
}

/// `h_i = Σ_j softmax_j(q_i·k_j / τ) v_j`
pub fn standard_attention(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttentionConfig) -> Result<AttentionOutput> {
    check_qkv(q, k, v, cfg)?;
    if !cfg.weights.is_identity() {
        return Err(Error::Parameter("standard attention requires identity weights".into()));
    }
    finish(scores(q, k, None, cfg), v, vec![EllipticalWeights::identity(cfg.head_dim)])
}

/// Attention with a fixed metric, one per query row or a single shared one.
pub fn attention_with_metric(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    metric: Vec<EllipticalWeights>,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput> {
    check_qkv(q, k, v, cfg)?;
    if metric.len() != 1 && metric.len() != q.rows() {
        return shape_err(format!("{} metrics for {} queries", metric.len(), q.rows()));
    }
    if let Some(bad) = metric.iter().find(|m| m.dim() != cfg.head_dim) {
        return shape_err(format!("{}-dim metric for head dim {}", bad.dim(), cfg.head_dim));
    }
    let logits = scores(q, k, Some(&metric), cfg);
    finish(logits, v, metric)
}

/// Metric weights for each query row, from the move `v_prev → v`.
///
/// Without masking every row shares the estimate over the whole sequence.
/// Under causal masking row `i` uses only positions `0..=i`, so no query
/// sees statistics of later tokens through `M`.
pub fn elliptical_metric(
    v: &Matrix,
    v_prev: &Matrix,
    mode: ScalingMode,
    floor: f64,
    causal: bool,
    delta: f64,
    rng: &mut Rng,
) -> Result<Vec<EllipticalWeights>> {
    if mode == ScalingMode::Random {
        // Independent of the values; one draw serves every row.
        estimate_overlayers(v, v_prev, delta)?;
        return Ok(vec![apply_scaling(&vec![1.0; v.cols()], mode, floor, rng)?]);
    }
    if causal {
        estimate_overlayers_prefix(v, v_prev, delta)?
            .iter()
            .map(|raw| apply_scaling(raw, mode, floor, rng))
            .collect()
    } else {
        let est = estimate_overlayers(v, v_prev, delta)?;
        Ok(vec![apply_scaling(&est.raw, mode, floor, rng)?])
    }
}

/// `h = softmax(Q M Kᵀ / τ) V` with `M` estimated from `v` against `v_prev`.
///
/// The metric is computed from plain matrices; callers that differentiate
/// through attention treat it as a constant.
pub fn elliptical_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    v_prev: &Matrix,
    cfg: &AttentionConfig,
    delta: f64,
    rng: &mut Rng,
) -> Result<AttentionOutput> {
    check_qkv(q, k, v, cfg)?;
    if cfg.causal && q.rows() != v.rows() {
        return shape_err("causal elliptical attention needs as many queries as values");
    }
    let metric = elliptical_metric(v, v_prev, cfg.weights.mode(), cfg.weights.floor(), cfg.causal, delta, rng)?;
    attention_with_metric(q, k, v, metric, cfg)
}

fn check_masa(q: &[f64], keys: &Matrix, m: &[f64]) -> Result<()> {
    if q.len() != keys.cols() || m.len() != keys.cols() {
        return shape_err(format!(
            "query length {} and {} weights for {}-dim keys",
            q.len(),
            m.len(),
            keys.cols()
        ));
    }
    if keys.rows() == 0 {
        return shape_err("Mahalanobis softmax over no keys");
    }
    Ok(())
}

/// `MaSA_j(q) = exp(qᵀ M k_j) / Σ_s exp(qᵀ M k_s)` at unit temperature.
pub fn masa(q: &[f64], keys: &Matrix, w: &EllipticalWeights) -> Result<Vec<f64>> {
    masa_raw(q, keys, w.as_slice())
}

/// [`masa`] with bare weights, which may be zero.
pub fn masa_raw(q: &[f64], keys: &Matrix, m: &[f64]) -> Result<Vec<f64>> {
    check_masa(q, keys, m)?;
    let qm: Vec<f64> = q.iter().zip(m).map(|(a, b)| a * b).collect();
    let logits: Vec<f64> = (0..keys.rows()).map(|j| dot(&qm, keys.row(j))).collect();
    Ok(softmax(&logits))
}

/// `N x D` Jacobian of [`masa`] in `q`:
/// `J_ji = m_i (k_j^i − Σ_s k_s^i MaSA_s(q)) MaSA_j(q)`.
pub fn masa_jacobian(q: &[f64], keys: &Matrix, w: &EllipticalWeights) -> Result<Matrix> {
    masa_jacobian_raw(q, keys, w.as_slice())
}

pub fn masa_jacobian_raw(q: &[f64], keys: &Matrix, m: &[f64]) -> Result<Matrix> {
    let p = masa_raw(q, keys, m)?;
    let (n, d) = keys.shape();
    let mut mean_key = vec![0.0; d];
    for (s, ps) in p.iter().enumerate() {
        for (mk, ks) in mean_key.iter_mut().zip(keys.row(s)) {
            *mk += ks * ps;
        }
    }
    Ok(Matrix::from_fn(n, d, |j, i| m[i] * (keys[(j, i)] - mean_key[i]) * p[j]))
}

/// `ĥ(q) = Σ_j MaSA_j(q) v_j`
pub fn masa_output(q: &[f64], keys: &Matrix, values: &Matrix, m: &[f64]) -> Result<Vec<f64>> {
    if values.rows() != keys.rows() {
        return shape_err(format!("{} keys but {} values", keys.rows(), values.rows()));
    }
    let p = masa_raw(q, keys, m)?;
    let mut out = vec![0.0; values.cols()];
    for (j, pj) in p.iter().enumerate() {
        for (o, vj) in out.iter_mut().zip(values.row(j)) {
            *o += pj * vj;
        }
    }
    Ok(out)
}

/// Fresh identity-mode weights at the default floor.
pub fn identity_weights(dim: usize) -> EllipticalWeights {
    EllipticalWeights::with_mode(ScalingMode::Identity, DEFAULT_FLOOR, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{compute_kappa, squared_mahalanobis};
    use crate::numerics::{finite_diff_jacobian, relative_error};

    fn rand_matrix(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.uniform_range(lo, hi))
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn standard_hand_example() {
        let e = Matrix::identity(2);
        let q = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let cfg = AttentionConfig::new(2);
        assert_eq!(cfg.temperature, 2f64.sqrt());
        let out = standard_attention(&q, &e, &e, &cfg).unwrap();
        let p = 1.0 / (1.0 + (-1.0 / 2f64.sqrt()).exp());
        assert!(close(out.attn.row(0), &[p, 1.0 - p], 1e-12), "{:?}", out.attn);
        assert!(close(out.h.row(0), &[p, 1.0 - p], 1e-12));
        assert!(close(out.h.row(0), &[0.66976, 0.33024], 1e-5));
    }

    #[test]
    fn standard_degenerate_cases() {
        let mut rng = Rng::new(5);
        let cfg = AttentionConfig::new(3);
        let q = rand_matrix(&mut rng, 4, 3, -2.0, 2.0);
        let k1 = rand_matrix(&mut rng, 1, 3, -2.0, 2.0);
        let v1 = rand_matrix(&mut rng, 1, 2, -2.0, 2.0);
        let out = standard_attention(&q, &k1, &v1, &cfg).unwrap();
        for i in 0..4 {
            assert_eq!(out.h.row(i), v1.row(0));
        }

        let k = Matrix::from_fn(5, 3, |_, j| j as f64 - 1.0);
        let v = rand_matrix(&mut rng, 5, 2, -2.0, 2.0);
        let out = standard_attention(&q, &k, &v, &cfg).unwrap();
        let mean: Vec<f64> = (0..2).map(|c| v.column(c).iter().sum::<f64>() / 5.0).collect();
        for i in 0..4 {
            assert!(close(out.h.row(i), &mean, 1e-12));
        }
    }

    #[test]
    fn shape_and_parameter_errors() {
        let cfg = AttentionConfig::new(2);
        let a = Matrix::zeros(3, 2);
        assert!(matches!(standard_attention(&a, &a, &Matrix::zeros(2, 2), &cfg), Err(Error::Shape(_))));
        assert!(matches!(standard_attention(&Matrix::zeros(3, 3), &a, &a, &cfg), Err(Error::Shape(_))));
        let hot = cfg.clone().temperature(0.0);
        assert!(matches!(standard_attention(&a, &a, &a, &hot), Err(Error::Parameter(_))));
        let non_id = cfg.weights(EllipticalWeights::new(vec![1.0, 0.5], DEFAULT_FLOOR).unwrap());
        assert!(matches!(standard_attention(&a, &a, &a, &non_id), Err(Error::Parameter(_))));
        let e = Matrix::identity(2);
        assert!(matches!(masa(&[1.0], &e, &identity_weights(2)), Err(Error::Shape(_))));
    }

    #[test]
    fn rows_are_distributions() {
        let mut rng = Rng::new(11);
        for trial in 0..1000 {
            let n = 1 + rng.below(8);
            let d = 1 + rng.below(6);
            let causal = trial % 2 == 0;
            let q = rand_matrix(&mut rng, n, d, -3.0, 3.0);
            let k = rand_matrix(&mut rng, n, d, -3.0, 3.0);
            let v = rand_matrix(&mut rng, n, d, -3.0, 3.0);
            let vp = rand_matrix(&mut rng, n, d, -3.0, 3.0);
            let cfg = AttentionConfig::new(d).causal(causal);
            let std = standard_attention(&q, &k, &v, &cfg).unwrap();
            let ell_cfg = cfg.clone().scaling(ScalingMode::Maxscale);
            let ell = elliptical_attention(&q, &k, &v, &vp, &ell_cfg, 1.0, &mut rng).unwrap();
            let ell2 = elliptical_attention(&q, &k, &v, &vp, &cfg.clone().scaling(ScalingMode::Random), 1.0, &mut rng).unwrap();
            for out in [&std, &ell, &ell2] {
                for i in 0..n {
                    let row = out.attn.row(i);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
                    if causal {
                        assert!(row[i + 1..].iter().all(|&p| p == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn masa_examples() {
        let e = Matrix::identity(2);
        let p = masa(&[1.0, 0.0], &e, &identity_weights(2)).unwrap();
        assert!(close(&p, &[0.73106, 0.26894], 1e-5));
        let mut rng = Rng::new(2);
        let k = rand_matrix(&mut rng, 5, 3, -2.0, 2.0);
        let p = masa(&[0.0; 3], &k, &identity_weights(3)).unwrap();
        assert!(p.iter().all(|&x| x == 0.2));
    }

    #[test]
    fn masa_jacobian_matches_finite_differences_and_bound() {
        let mut rng = Rng::new(31);
        for _ in 0..1000 {
            let n = 1 + rng.below(8);
            let d = 1 + rng.below(6);
            let keys = rand_matrix(&mut rng, n, d, -2.0, 2.0);
            let m: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.05, 1.0)).collect();
            let q = rng.uniform_vec(d, -2.0, 2.0);
            let jac = masa_jacobian_raw(&q, &keys, &m).unwrap();
            let fd = finite_diff_jacobian(|x| masa_raw(x, &keys, &m).unwrap(), &q, 1e-5).unwrap();
            assert!(relative_error(&jac, &fd, 1e-8).unwrap() <= 1e-6);
            let kappa = compute_kappa(&keys);
            for j in 0..n {
                for i in 0..d {
                    assert!(jac[(j, i)].abs() <= kappa.get(i, j) * m[i]);
                }
            }
        }
    }

    #[test]
    fn masa_jacobian_degenerate_and_linear_in_m() {
        let mut rng = Rng::new(8);
        let keys = Matrix::from_fn(4, 3, |_, j| j as f64);
        let q = rng.uniform_vec(3, -1.0, 1.0);
        let jac = masa_jacobian_raw(&q, &keys, &[1.0, 0.3, 0.7]).unwrap();
        assert!(jac.data().iter().all(|&x| x == 0.0));

        let keys = rand_matrix(&mut rng, 4, 3, -2.0, 2.0);
        let zero = masa_jacobian_raw(&q, &keys, &[0.0; 3]).unwrap();
        assert!(zero.data().iter().all(|&x| x == 0.0));

        // With q on an axis the softmax depends on m_i only through q_i m_i = 0,
        // so halving m_i touches column i alone and halves it.
        let q = [0.0, 0.8, -0.4];
        let m = [0.9, 0.6, 0.4];
        let full = masa_jacobian_raw(&q, &keys, &m).unwrap();
        let half = masa_jacobian_raw(&q, &keys, &[0.45, 0.6, 0.4]).unwrap();
        for j in 0..4 {
            assert_eq!(half[(j, 0)], full[(j, 0)] * 0.5);
            assert_eq!(half[(j, 1)], full[(j, 1)]);
        }
    }

    #[test]
    fn unit_metric_norm_keys_give_gaussian_kernel_weights() {
        let mut rng = Rng::new(13);
        for _ in 0..200 {
            let n = 2 + rng.below(7);
            let d = 1 + rng.below(6);
            let m: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.1, 1.0)).collect();
            let mut keys = rand_matrix(&mut rng, n, d, -2.0, 2.0);
            for j in 0..n {
                let norm = squared_mahalanobis(keys.row(j), &vec![0.0; d], &m).unwrap().sqrt();
                keys.row_mut(j).iter_mut().for_each(|x| *x /= norm);
            }
            let q = rng.uniform_vec(d, -2.0, 2.0);
            let p = masa_raw(&q, &keys, &m).unwrap();
            let kernel: Vec<f64> = (0..n)
                .map(|j| (-squared_mahalanobis(&q, keys.row(j), &m).unwrap() / 2.0).exp())
                .collect();
            let total: f64 = kernel.iter().sum();
            let nw: Vec<f64> = kernel.iter().map(|x| x / total).collect();
            assert!(close(&p, &nw, 1e-9));
        }
    }

    #[test]
    fn identity_metric_gives_bitwise_standard_logits() {
        let mut rng = Rng::new(17);
        let cfg = AttentionConfig::new(4).causal(true);
        let q = rand_matrix(&mut rng, 6, 4, -2.0, 2.0);
        let k = rand_matrix(&mut rng, 6, 4, -2.0, 2.0);
        let v = rand_matrix(&mut rng, 6, 4, -2.0, 2.0);
        let logits = scores(&q, &k, Some(&[identity_weights(4)]), &cfg);
        assert_eq!(logits, standard_logits(&q, &k, &cfg));

        let std = standard_attention(&q, &k, &v, &cfg).unwrap();
        let vp = rand_matrix(&mut rng, 6, 4, -2.0, 2.0);
        let forced = elliptical_attention(&q, &k, &v, &vp, &cfg.clone().scaling(ScalingMode::Identity), 1.0, &mut rng).unwrap();
        assert_eq!(forced.attn, std.attn);
        assert_eq!(forced.h, std.h);

        let still = elliptical_attention(&q, &k, &v, &v, &cfg.clone().scaling(ScalingMode::Maxscale), 1.0, &mut rng).unwrap();
        assert_eq!(still.h, std.h);
    }

    #[test]
    fn brute_force_two_by_two() {
        let q = Matrix::from_rows(&[[0.5, -1.0], [1.5, 0.25]]).unwrap();
        let k = Matrix::from_rows(&[[1.0, 2.0], [-0.5, 1.0]]).unwrap();
        let v = Matrix::from_rows(&[[1.0, 0.0], [3.0, 2.0]]).unwrap();
        // v - v_prev has column means (2, 1), so maxscale gives m = (1, 0.5).
        let vp = Matrix::from_rows(&[[-1.0, -1.0], [1.0, 1.0]]).unwrap();
        let cfg = AttentionConfig::new(2).scaling(ScalingMode::Maxscale);
        let out = elliptical_attention(&q, &k, &v, &vp, &cfg, 1.0, &mut Rng::new(0)).unwrap();
        assert_eq!(out.metric[0].as_slice(), &[1.0, 0.5]);

        let m = [1.0, 0.5];
        let tau = 2f64.sqrt();
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| (q[(i, 0)] * m[0] * k[(j, 0)] + q[(i, 1)] * m[1] * k[(j, 1)]) / tau)
                .collect();
            let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let z = e[0] + e[1];
            let h = [(e[0] * v[(0, 0)] + e[1] * v[(1, 0)]) / z, (e[0] * v[(0, 1)] + e[1] * v[(1, 1)]) / z];
            assert!(close(out.h.row(i), &h, 1e-12));
        }
    }

    #[test]
    fn permuting_keys_permutes_columns() {
        let mut rng = Rng::new(23);
        let (n, d) = (6, 3);
        let q = rand_matrix(&mut rng, 4, d, -2.0, 2.0);
        let k = rand_matrix(&mut rng, n, d, -2.0, 2.0);
        let v = rand_matrix(&mut rng, n, 2, -2.0, 2.0);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let kp = Matrix::from_fn(n, d, |r, c| k[(perm[r], c)]);
        let vp = Matrix::from_fn(n, 2, |r, c| v[(perm[r], c)]);
        let w = EllipticalWeights::new(vec![1.0, 0.2, 0.6], DEFAULT_FLOOR).unwrap();
        let cfg = AttentionConfig::new(d);
        let a = attention_with_metric(&q, &k, &v, vec![w.clone()], &cfg).unwrap();
        let b = attention_with_metric(&q, &kp, &vp, vec![w], &cfg).unwrap();
        for i in 0..4 {
            for r in 0..n {
                assert!((b.attn[(i, r)] - a.attn[(i, perm[r])]).abs() <= 1e-12);
            }
            assert!(close(a.h.row(i), b.h.row(i), 1e-12));
        }
    }

    #[test]
    fn causal_prefix_rows_survive_extension() {
        let mut rng = Rng::new(29);
        let (n, d) = (7, 3);
        let q = rand_matrix(&mut rng, n, d, -2.0, 2.0);
        let k = rand_matrix(&mut rng, n, d, -2.0, 2.0);
        let v = rand_matrix(&mut rng, n, d, -2.0, 2.0);
        let vp = rand_matrix(&mut rng, n, d, -2.0, 2.0);
        let cfg = AttentionConfig::new(d).causal(true).scaling(ScalingMode::Maxscale);
        let full = elliptical_attention(&q, &k, &v, &vp, &cfg, 1.0, &mut rng).unwrap();
        for len in 1..n {
            let cut = |m: &Matrix| m.slice_rows(0, len).unwrap();
            let part = elliptical_attention(&cut(&q), &cut(&k), &cut(&v), &cut(&vp), &cfg, 1.0, &mut rng).unwrap();
            for i in 0..len {
                assert_eq!(part.h.row(i), full.h.row(i));
                assert_eq!(part.attn.row(i), &full.attn.row(i)[..len]);
            }
        }
    }
}
