use std::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, Rng};

/// Key marginal `μ`.
#[derive(Clone, Debug, PartialEq)]
pub enum Marginal {
    /// Independent uniform coordinates on `[lo, hi]`.
    UniformBox { dim: usize, lo: f64, hi: f64 },
    /// Independent normal coordinates.
    Gaussian { dim: usize, mean: f64, std: f64 },
}

impl Marginal {
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Marginal::UniformBox { dim, lo, hi }
    }

    pub fn dim(&self) -> usize {
        match self {
            Marginal::UniformBox { dim, .. } | Marginal::Gaussian { dim, .. } => *dim,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match *self {
            Marginal::UniformBox { dim, lo, hi } => rng.uniform_vec(dim, lo, hi),
            Marginal::Gaussian { dim, mean, std } => (0..dim).map(|_| mean + std * rng.normal()).collect(),
        }
    }

    pub fn sample_matrix(&self, n: usize, rng: &mut Rng) -> Matrix {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend(self.sample(rng));
        }
        Matrix::from_vec_unchecked(n, d, data)
    }
}

/// One `amp · sin(freq · x[coord] + phase)` term.
#[derive(Clone, Debug, PartialEq)]
pub struct SinTerm {
    pub coord: usize,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

/// Ground-truth regression functions with known structure.
#[derive(Clone, Debug, PartialEq)]
pub enum SyntheticFunction {
    /// `f(x) = A x + b`, `A` is `D_v x D`.
    Affine { a: Matrix, b: Vec<f64> },
    /// `f_i(x) = amp_i sin(freq_i x_i + phase_i)`, output dimension `D`.
    SeparableSinusoid { amp: Vec<f64>, freq: Vec<f64>, phase: Vec<f64> },
    /// Scalar `f(x) = Σ_terms amp sin(freq x[coord] + phase)`; coordinates without
    /// a term are irrelevant.
    SparseSum { dim: usize, terms: Vec<SinTerm> },
    /// `below` when `x[axis] < threshold`, `above` otherwise.
    PiecewiseConstant { dim: usize, axis: usize, threshold: f64, below: Vec<f64>, above: Vec<f64> },
}

impl SyntheticFunction {
    pub fn linear(a: Matrix) -> Self {
        let b = vec![0.0; a.rows()];
        SyntheticFunction::Affine { a, b }
    }

    pub fn constant(dim: usize, value: Vec<f64>) -> Self {
        SyntheticFunction::Affine { a: Matrix::zeros(value.len(), dim), b: value }
    }

    pub fn separable(amp: Vec<f64>, freq: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        if amp.len() != freq.len() || amp.len() != phase.len() {
            return shape_err("separable sinusoid parameter lengths differ");
        }
        Ok(SyntheticFunction::SeparableSinusoid { amp, freq, phase })
    }

    /// `sin(x_1)` embedded in `dim` coordinates.
    pub fn sparse_first_coordinate(dim: usize, amp: f64, freq: f64) -> Self {
        SyntheticFunction::SparseSum { dim, terms: vec![SinTerm { coord: 0, amp, freq, phase: 0.0 }] }
    }

    /// Same sinusoid in every coordinate, so all directions vary equally.
    pub fn equal_variability(dim: usize, amp: f64, freq: f64) -> Self {
        let terms = (0..dim).map(|coord| SinTerm { coord, amp, freq, phase: 0.0 }).collect();
        SyntheticFunction::SparseSum { dim, terms }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SyntheticFunction::Affine { a, .. } => a.cols(),
            SyntheticFunction::SeparableSinusoid { amp, .. } => amp.len(),
            SyntheticFunction::SparseSum { dim, .. } | SyntheticFunction::PiecewiseConstant { dim, .. } => *dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SyntheticFunction::Affine { a, .. } => a.rows(),
            SyntheticFunction::SeparableSinusoid { amp, .. } => amp.len(),
            SyntheticFunction::SparseSum { .. } => 1,
            SyntheticFunction::PiecewiseConstant { below, .. } => below.len(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        match self {
            SyntheticFunction::Affine { a, b } => (0..a.rows())
                .map(|r| b[r] + a.row(r).iter().zip(x).map(|(p, q)| p * q).sum::<f64>())
                .collect(),
            SyntheticFunction::SeparableSinusoid { amp, freq, phase } => (0..amp.len())
                .map(|i| amp[i] * (freq[i] * x[i] + phase[i]).sin())
                .collect(),
            SyntheticFunction::SparseSum { terms, .. } => {
                vec![terms.iter().map(|t| t.amp * (t.freq * x[t.coord] + t.phase).sin()).sum()]
            }
            SyntheticFunction::PiecewiseConstant { axis, threshold, below, above, .. } => {
                if x[*axis] < *threshold { below.clone() } else { above.clone() }
            }
        }
    }

    /// Evaluates every row of `x`.
    pub fn eval_rows(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return shape_err(format!("{}-dim function on {}-column inputs", self.input_dim(), x.cols()));
        }
        let dv = self.output_dim();
        let mut data = Vec::with_capacity(x.rows() * dv);
        for i in 0..x.rows() {
            data.extend(self.eval(x.row(i)));
        }
        Matrix::new(x.rows(), dv, data).map_err(|e| Error::Evaluation(e.to_string()))
    }

    /// Closed-form `E_μ ‖J_f e_i‖₁` where one exists for this function and marginal.
    pub fn analytic_variability(&self, mu: &Marginal) -> Option<Vec<f64>> {
        match self {
            SyntheticFunction::Affine { a, .. } => {
                Some((0..a.cols()).map(|i| a.column(i).iter().map(|v| v.abs()).sum()).collect())
            }
            SyntheticFunction::SeparableSinusoid { amp, freq, phase } => {
                let &Marginal::UniformBox { lo, hi, .. } = mu else { return None };
                Some((0..amp.len()).map(|i| mean_abs_sin_slope(amp[i], freq[i], phase[i], lo, hi)).collect())
            }
            SyntheticFunction::SparseSum { dim, terms } => {
                let &Marginal::UniformBox { lo, hi, .. } = mu else { return None };
                let mut out = vec![0.0; *dim];
                let mut seen = vec![false; *dim];
                for t in terms {
                    if seen[t.coord] {
                        return None;
                    }
                    seen[t.coord] = true;
                    out[t.coord] = mean_abs_sin_slope(t.amp, t.freq, t.phase, lo, hi);
                }
                Some(out)
            }
            SyntheticFunction::PiecewiseConstant { .. } => None,
        }
    }

    /// `G_i = sup_x ‖J_f(x) e_i‖₂`, where the function is Lipschitz.
    pub fn column_gradient_bounds(&self) -> Option<Vec<f64>> {
        match self {
            SyntheticFunction::Affine { a, .. } => {
                Some((0..a.cols()).map(|i| a.column(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect())
            }
            SyntheticFunction::SeparableSinusoid { amp, freq, .. } => {
                Some(amp.iter().zip(freq).map(|(a, f)| (a * f).abs()).collect())
            }
            SyntheticFunction::SparseSum { dim, terms } => {
                let mut out = vec![0.0; *dim];
                for t in terms {
                    out[t.coord] += (t.amp * t.freq).abs();
                }
                Some(out)
            }
            SyntheticFunction::PiecewiseConstant { .. } => None,
        }
    }
}

/// Antiderivative of `|cos u|` that is continuous and increasing.
fn abs_cos_antiderivative(u: f64) -> f64 {
    let k = ((u + PI / 2.0) / PI).floor();
    let sign = if (k as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    2.0 * k + sign * u.sin() + 1.0
}

/// `E|d/dx amp sin(freq x + phase)|` for `x ~ U[lo, hi]`.
fn mean_abs_sin_slope(amp: f64, freq: f64, phase: f64, lo: f64, hi: f64) -> f64 {
    if freq == 0.0 || amp == 0.0 {
        return 0.0;
    }
    let (a, b) = (freq * lo + phase, freq * hi + phase);
    amp.abs() * (abs_cos_antiderivative(a.max(b)) - abs_cos_antiderivative(a.min(b))) / (hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abs_cos_integral() {
        // ∫_{-π}^{π} |cos| = 4, ∫_0^{π/2} |cos| = 1
        let g = abs_cos_antiderivative;
        assert!((g(PI) - g(-PI) - 4.0).abs() < 1e-12);
        assert!((g(PI / 2.0) - g(0.0) - 1.0).abs() < 1e-12);
        assert!((g(10.0) - g(-3.0) - quad(|u| u.cos().abs(), -3.0, 10.0)).abs() < 1e-7);
    }

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        // composite Simpson
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn sin_on_symmetric_period_has_two_over_pi() {
        let f = SyntheticFunction::separable(vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let v = f.analytic_variability(&Marginal::uniform(2, -PI, PI)).unwrap();
        assert!((v[0] - 2.0 / PI).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn catalog_shapes_and_values() {
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 1.0], [1.0, -1.0]]).unwrap();
        let lin = SyntheticFunction::linear(a);
        assert_eq!((lin.input_dim(), lin.output_dim()), (2, 3));
        assert_eq!(lin.eval(&[1.0, 2.0]), vec![2.0, 2.0, -1.0]);
        assert_eq!(lin.analytic_variability(&Marginal::uniform(2, -1.0, 1.0)).unwrap(), vec![3.0, 2.0]);

        let pc = SyntheticFunction::PiecewiseConstant {
            dim: 2,
            axis: 0,
            threshold: 0.0,
            below: vec![1.0, 0.0],
            above: vec![0.0, 1.0],
        };
        assert_eq!(pc.eval(&[-0.1, 5.0]), vec![1.0, 0.0]);
        assert_eq!(pc.eval(&[0.0, -5.0]), vec![0.0, 1.0]);
        assert!(pc.column_gradient_bounds().is_none());

        let sp = SyntheticFunction::sparse_first_coordinate(5, 1.0, 1.0);
        assert_eq!(sp.output_dim(), 1);
        assert_eq!(sp.column_gradient_bounds().unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
