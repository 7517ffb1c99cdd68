//! Self-contained property suites behind the `verify` subcommand. Each suite
//! draws its own random instances from a seed and reports the worst value of
//! its check statistic against a limit.

use std::fmt;

use crate::attention::{attention_with_metric, elliptical_attention, masa_jacobian_raw, masa_output, masa_raw, standard_attention, standard_logits, AttentionConfig};
use crate::error::Result;
use crate::metric::{compute_kappa_with, mahalanobis_distance, robustness_bound_from_kappa, EllipticalWeights, KappaFault, ScalingMode, DEFAULT_FLOOR};
use crate::numerics::{finite_diff_jacobian_scaled, matmul, norm2, relative_error, softmax_rows, Matrix, Rng, Tape, Var};
use crate::nwlab::nw_point;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    /// Cases whose statistic exceeded `limit`.
    pub violations: usize,
    /// Largest statistic observed.
    pub worst: f64,
    pub limit: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<20} cases={} violations={} max={:e} limit={:e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.violations,
            self.worst,
            self.limit
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Negative control: corrupts the κ coefficients used by the bound suites.
    pub fault: Option<KappaFault>,
}

struct Tally {
    name: &'static str,
    limit: f64,
    cases: usize,
    violations: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str, limit: f64) -> Self {
        Self { name, limit, cases: 0, violations: 0, worst: f64::NEG_INFINITY }
    }

    fn record(&mut self, stat: f64) {
        self.cases += 1;
        // NaN counts as a violation.
        if !(stat <= self.limit) {
            self.violations += 1;
        }
        if stat > self.worst || stat.is_nan() {
            self.worst = stat;
        }
    }

    fn done(self) -> SuiteResult {
        SuiteResult { name: self.name, cases: self.cases, violations: self.violations, worst: self.worst, limit: self.limit }
    }
}

fn rand_matrix(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.uniform_range(lo, hi))
}

fn rand_weights(rng: &mut Rng, d: usize) -> Vec<f64> {
    let raw = rng.uniform_vec(d, 0.0, 1.0);
    let max = raw.iter().copied().fold(0.0, f64::max);
    raw.iter().map(|v| (v / max).max(DEFAULT_FLOOR)).collect()
}

/// Rows of random matrices sum to 1; statistic `max |Σ − 1|`, entries outside `[0, 1]` count as 1.
pub fn suite_softmax(rng: &mut Rng) -> SuiteResult {
    let mut t = Tally::new("softmax", 1e-12);
    for _ in 0..1000 {
        let (r, c) = (1 + rng.below(10), 1 + rng.below(10));
        let z = rand_matrix(rng, r, c, -50.0, 50.0);
        let s = softmax_rows(&z);
        let mut stat: f64 = 0.0;
        for i in 0..r {
            stat = stat.max((s.row(i).iter().sum::<f64>() - 1.0).abs());
            if s.row(i).iter().any(|p| !(0.0..=1.0).contains(p)) {
                stat = 1.0;
            }
        }
        t.record(stat);
    }
    t.done()
}

/// `(AB)C` against `A(BC)`, relative to the larger entry.
pub fn suite_matmul(rng: &mut Rng) -> SuiteResult {
    let mut t = Tally::new("matmul-assoc", 1e-9);
    for _ in 0..500 {
        let (n, k, l, m) = (1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8));
        let a = rand_matrix(rng, n, k, -3.0, 3.0);
        let b = rand_matrix(rng, k, l, -3.0, 3.0);
        let c = rand_matrix(rng, l, m, -3.0, 3.0);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        t.record(relative_error(&left, &right, 1e-12).unwrap_or(f64::NAN));
    }
    t.done()
}

type Build = fn(&mut Tape, &[Var], &mut Rng) -> Result<Var>;

/// One primitive under test: input shapes and how to build its output.
struct Primitive {
    shapes: &'static [(usize, usize)],
    build: Build,
}

fn primitives() -> Vec<Primitive> {
    vec![
        Primitive { shapes: &[(3, 4), (4, 2)], build: |t, x, _| t.matmul(x[0], x[1]) },
        Primitive { shapes: &[(3, 4), (5, 4)], build: |t, x, _| t.matmul_t(x[0], x[1]) },
        Primitive { shapes: &[(3, 4), (3, 4)], build: |t, x, _| t.add(x[0], x[1]) },
        Primitive { shapes: &[(3, 4), (1, 4)], build: |t, x, _| t.add_row(x[0], x[1]) },
        Primitive { shapes: &[(3, 4), (3, 4)], build: |t, x, _| t.hadamard(x[0], x[1]) },
        Primitive {
            shapes: &[(3, 4)],
            build: |t, x, r| {
                let c = rand_matrix(r, 3, 4, -2.0, 2.0);
                t.mul_const(x[0], c)
            },
        },
        Primitive { shapes: &[(3, 4)], build: |t, x, _| t.scale(x[0], -1.7) },
        Primitive { shapes: &[(3, 5)], build: |t, x, _| t.softmax_rows(x[0]) },
        Primitive {
            shapes: &[(4, 4)],
            build: |t, x, _| {
                let m = t.causal_mask(x[0])?;
                t.softmax_rows(m)
            },
        },
        Primitive { shapes: &[(3, 5), (1, 5), (1, 5)], build: |t, x, _| t.layer_norm(x[0], x[1], x[2]) },
        Primitive { shapes: &[(3, 4)], build: |t, x, _| t.gelu(x[0]) },
        Primitive { shapes: &[(5, 3)], build: |t, x, _| t.gather_rows(x[0], &[4, 0, 4, 2]) },
        Primitive { shapes: &[(3, 6)], build: |t, x, _| t.slice_cols(x[0], 2, 3) },
        Primitive { shapes: &[(3, 2), (3, 3)], build: |t, x, _| t.concat_cols(&[x[0], x[1], x[0]]) },
        Primitive { shapes: &[(4, 5)], build: |t, x, _| t.cross_entropy(x[0], &[0, 4, 2, 2]) },
        Primitive {
            shapes: &[(3, 4), (3, 4)],
            build: |t, x, _| {
                let a = t.sum(x[0])?;
                let b = t.sum(x[1])?;
                t.mean_scalars(&[a, b, a])
            },
        },
    ]
}

/// Reverse-mode vector-Jacobian products of every tape primitive against
/// central differences with step `1e-5 (1 + |x|)`.
pub fn suite_tape(rng: &mut Rng) -> SuiteResult {
    let mut t = Tally::new("tape-vs-fd", 1e-4);
    for prim in primitives() {
        for _ in 0..10 {
            let inputs: Vec<Matrix> = prim.shapes.iter().map(|&(r, c)| rand_matrix(rng, r, c, -2.0, 2.0)).collect();
            let build_seed = rng.next_u64();
            let weight_seed = rng.next_u64();
            // loss = Σ w ⊙ f(x) with fixed random w
            let loss_of = |xs: &[Matrix], tape: &mut Tape| -> Result<(Var, Vec<Var>)> {
                let vars: Vec<Var> = xs.iter().map(|m| tape.leaf(m.clone())).collect();
                let y = (prim.build)(tape, &vars, &mut Rng::new(build_seed))?;
                let (r, c) = tape.value(y).shape();
                let w = rand_matrix(&mut Rng::new(weight_seed), r, c, -1.0, 1.0);
                let yw = tape.mul_const(y, w)?;
                Ok((tape.sum(yw)?, vars))
            };
            let mut tape = Tape::new();
            let Ok((loss, vars)) = loss_of(&inputs, &mut tape) else {
                t.record(f64::NAN);
                continue;
            };
            let Ok(grads) = tape.backward(loss) else {
                t.record(f64::NAN);
                continue;
            };
            for (which, x) in inputs.iter().enumerate() {
                let f = |flat: &[f64]| {
                    let mut xs = inputs.clone();
                    xs[which] = Matrix::new(x.rows(), x.cols(), flat.to_vec()).unwrap();
                    let mut tp = Tape::new();
                    let (l, _) = loss_of(&xs, &mut tp).unwrap();
                    vec![tp.value(l)[(0, 0)]]
                };
                let fd = finite_diff_jacobian_scaled(f, x.data(), 1e-5).unwrap();
                let an = grads.get_or_zeros(vars[which], x);
                let an = Matrix::new(1, an.data().len(), an.data().to_vec()).unwrap();
                t.record(relative_error(&an, &fd, 1e-8).unwrap_or(f64::NAN));
            }
        }
    }
    t.done()
}

fn masa_instance(rng: &mut Rng) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, d) = (1 + rng.below(8), 1 + rng.below(6));
    let keys = rand_matrix(rng, n, d, -2.0, 2.0);
    let m = rand_weights(rng, d);
    let q = rng.uniform_vec(d, -2.0, 2.0);
    (keys, m, q)
}

/// Closed-form Mahalanobis-softmax Jacobian against central differences.
pub fn suite_masa_jacobian(rng: &mut Rng) -> SuiteResult {
    let mut t = Tally::new("masa-jacobian", 1e-6);
    for _ in 0..1000 {
        let (keys, m, q) = masa_instance(rng);
        let an = masa_jacobian_raw(&q, &keys, &m).unwrap();
        let fd = finite_diff_jacobian_scaled(|x| masa_raw(x, &keys, &m).unwrap(), &q, 1e-5).unwrap();
        t.record(relative_error(&an, &fd, 1e-8).unwrap_or(f64::NAN));
    }
    t.done()
}

/// `|J_ji| ≤ κ_ij m_i`; statistic is the largest `|J_ji| − κ_ij m_i`.
pub fn suite_masa_sensitivity(rng: &mut Rng, fault: Option<KappaFault>) -> SuiteResult {
    let mut t = Tally::new("masa-sensitivity", 0.0);
    for _ in 0..1000 {
        let (keys, m, q) = masa_instance(rng);
        let jac = masa_jacobian_raw(&q, &keys, &m).unwrap();
        let kappa = compute_kappa_with(&keys, fault);
        for j in 0..keys.rows() {
            for i in 0..keys.cols() {
                t.record(jac[(j, i)].abs() - kappa.get(i, j) * m[i]);
            }
        }
    }
    t.done()
}

/// `‖ĥ(q + ε) − ĥ(q)‖ ≤ B ‖ε‖` at unit temperature; statistic is the ratio minus `B`.
pub fn suite_robustness_bound(rng: &mut Rng, fault: Option<KappaFault>) -> SuiteResult {
    let mut t = Tally::new("robustness-bound", 0.0);
    for _ in 0..100 {
        let (n, d) = (1 + rng.below(8), 1 + rng.below(6));
        let keys = rand_matrix(rng, n, d, -2.0, 2.0);
        let dv = 1 + rng.below(4);
        let values = rand_matrix(rng, n, dv, -2.0, 2.0);
        let m = rand_weights(rng, d);
        let bound = robustness_bound_from_kappa(&compute_kappa_with(&keys, fault), &values, &m).unwrap();
        let q = rng.uniform_vec(d, -2.0, 2.0);
        let h = masa_output(&q, &keys, &values, &m).unwrap();
        for _ in 0..1000 {
            let r = (rng.uniform_range(1e-3f64.ln(), 0.0)).exp();
            let eps = rng.sphere(d, r);
            let qe: Vec<f64> = q.iter().zip(&eps).map(|(a, b)| a + b).collect();
            let he = masa_output(&qe, &keys, &values, &m).unwrap();
            let diff: Vec<f64> = he.iter().zip(&h).map(|(a, b)| a - b).collect();
            t.record(norm2(&diff) / r - bound);
        }
    }
    t.done()
}

/// Non-negativity, symmetry, identity and triangle inequality of the floored
/// Mahalanobis distance; statistic is the largest violation.
pub fn suite_metric_axioms(rng: &mut Rng) -> SuiteResult {
    let mut t = Tally::new("metric-axioms", 1e-9);
    for _ in 0..1000 {
        let d = 1 + rng.below(6);
        let w = EllipticalWeights::new(rand_weights(rng, d), DEFAULT_FLOOR).unwrap();
        let (x, y, z) = (rng.uniform_vec(d, -3.0, 3.0), rng.uniform_vec(d, -3.0, 3.0), rng.uniform_vec(d, -3.0, 3.0));
        let dist = |a: &[f64], b: &[f64]| mahalanobis_distance(a, b, &w).unwrap();
        let stat = [
            -dist(&x, &y),
            (dist(&x, &y) - dist(&y, &x)).abs(),
            dist(&x, &x),
            dist(&x, &z) - dist(&x, &y) - dist(&y, &z),
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
        t.record(stat);
    }
    t.done()
}

/// κ against an independent two-loop evaluation; must agree exactly.
pub fn suite_kappa(rng: &mut Rng) -> SuiteResult {
    let mut t = Tally::new("kappa-reference", 0.0);
    for _ in 0..200 {
        let (n, d) = (1 + rng.below(8), 1 + rng.below(6));
        let keys = rand_matrix(rng, n, d, -2.0, 2.0);
        let kappa = compute_kappa_with(&keys, None);
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..d {
                let mut rest = 0.0;
                for s in (0..n).filter(|&s| s != j) {
                    rest += keys[(s, i)].abs();
                }
                let reference = keys[(j, i)].abs() / 4.0 + rest;
                worst = worst.max((reference - kappa.get(i, j)).abs());
            }
        }
        t.record(worst);
    }
    t.done()
}

/// Identity-weight NW regression with bandwidth `√τ` equals attention at
/// temperature `τ` on unit-norm keys.
pub fn suite_nw_attention(rng: &mut Rng) -> SuiteResult {
    let mut t = Tally::new("nw-attention", 1e-9);
    for _ in 0..200 {
        let (n, d) = (1 + rng.below(10), 1 + rng.below(6));
        let raw = Matrix::from_fn(n, d, |_, _| rng.normal());
        let keys = Matrix::from_fn(n, d, |i, j| raw[(i, j)] / norm2(raw.row(i)));
        let values = rand_matrix(rng, n, 3, -2.0, 2.0);
        let q = rand_matrix(rng, 3, d, -2.0, 2.0);
        let cfg = AttentionConfig::new(d);
        let att = attention_with_metric(&q, &keys, &values, vec![EllipticalWeights::identity(d)], &cfg).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            let nw = nw_point(q.row(i), &keys, &values, cfg.temperature.sqrt(), &vec![1.0; d]).unwrap();
            for (a, b) in nw.iter().zip(att.h.row(i)) {
                worst = worst.max((a - b).abs());
            }
        }
        t.record(worst);
    }
    t.done()
}

/// Elliptical attention forced to identity weights reproduces standard
/// attention bitwise; statistic is the number of differing entries.
pub fn suite_identity_reduction(rng: &mut Rng) -> SuiteResult {
    let mut t = Tally::new("identity-reduction", 0.0);
    for trial in 0..200 {
        let (n, d) = (1 + rng.below(8), 1 + rng.below(6));
        let (q, k, v, vp) = (
            rand_matrix(rng, n, d, -2.0, 2.0),
            rand_matrix(rng, n, d, -2.0, 2.0),
            rand_matrix(rng, n, d, -2.0, 2.0),
            rand_matrix(rng, n, d, -2.0, 2.0),
        );
        let cfg = AttentionConfig::new(d).causal(trial % 2 == 0);
        let std = standard_attention(&q, &k, &v, &cfg).unwrap();
        let id = cfg.clone().scaling(ScalingMode::Identity);
        let ell = elliptical_attention(&q, &k, &v, &vp, &id, 1.0, rng).unwrap();
        let zero_move = elliptical_attention(&q, &k, &v, &v, &cfg.clone().scaling(ScalingMode::Maxscale), 1.0, rng).unwrap();
        let logits = standard_logits(&q, &k, &cfg);
        let ell_logits = {
            let w = &ell.metric[0];
            let qm = Matrix::from_fn(n, d, |i, j| q[(i, j)] * w.as_slice()[j]);
            standard_logits(&qm, &k, &cfg)
        };
        let differ = |a: &Matrix, b: &Matrix| a.data().iter().zip(b.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        t.record((differ(&std.h, &ell.h) + differ(&std.h, &zero_move.h) + differ(&logits, &ell_logits)) as f64);
    }
    t.done()
}

/// Runs every suite with streams derived from `cfg.seed`.
pub fn run_all(cfg: &VerifyConfig) -> Vec<SuiteResult> {
    let r = |tag: u64| Rng::derive(cfg.seed, &[0x7e51f, tag]);
    vec![
        suite_softmax(&mut r(1)),
        suite_matmul(&mut r(2)),
        suite_tape(&mut r(3)),
        suite_masa_jacobian(&mut r(4)),
        suite_masa_sensitivity(&mut r(5), cfg.fault),
        suite_robustness_bound(&mut r(6), cfg.fault),
        suite_metric_axioms(&mut r(7)),
        suite_kappa(&mut r(8)),
        suite_nw_attention(&mut r(9)),
        suite_identity_reduction(&mut r(10)),
    ]
}
