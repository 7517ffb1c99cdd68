//! Central finite-difference Jacobians, the oracle every analytic derivative
//! in this crate is checked against.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Jacobian of `f` at `x` with a fixed step `h`; column `i` is
/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_jacobian<F>(f: F, x: &[f64], h: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {h}")));
    }
    jacobian_with_steps(f, x, |_| h)
}

/// Jacobian with per-coordinate step `rel * (1 + |x_i|)`.
pub fn finite_diff_jacobian_scaled<F>(f: F, x: &[f64], rel: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(rel > 0.0) {
        return Err(Error::Parameter(format!("relative step must be positive, got {rel}")));
    }
    jacobian_with_steps(f, x, |xi| rel * (1.0 + xi.abs()))
}

fn jacobian_with_steps<F, S>(f: F, x: &[f64], step: S) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
    S: Fn(f64) -> f64,
{
    let mut probe = x.to_vec();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(x.len());
    let mut out_dim = None;
    for i in 0..x.len() {
        let h = step(x[i]);
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        let m = *out_dim.get_or_insert(plus.len());
        if plus.len() != m || minus.len() != m {
            return Err(Error::Shape("function output length changed between evaluations".into()));
        }
        if plus.iter().chain(&minus).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("f is non-finite near x along coordinate {i}")));
        }
        cols.push(plus.iter().zip(&minus).map(|(p, q)| (p - q) / (2.0 * h)).collect());
    }
    let m = out_dim.unwrap_or_else(|| f(x).len());
    Ok(Matrix::from_fn(m, x.len(), |r, c| cols[c][r]))
}

/// Gradient of a scalar function, central differences with scaled step.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], rel: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let j = finite_diff_jacobian_scaled(|p| vec![f(p)], x, rel)?;
    Ok(j.row(0).to_vec())
}

/// Max-norm relative discrepancy `max|a - b| / max(max|a|, floor)`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> Result<f64> {
    let diff = analytic.max_abs_diff(numeric)?;
    Ok(diff / analytic.max_abs().max(numeric.max_abs()).max(floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, Rng};

    #[test]
    fn identity_map() {
        let x = [0.3, -2.0, 5.5];
        let j = finite_diff_jacobian(|v| v.to_vec(), &x, 1e-4).unwrap();
        assert!(j.max_abs_diff(&Matrix::identity(3)).unwrap() < 1e-10);
    }

    #[test]
    fn linear_map_recovers_matrix() {
        let mut rng = Rng::new(5);
        let a = Matrix::from_fn(4, 3, |_, _| rng.uniform_range(-2.0, 2.0));
        let f = |v: &[f64]| {
            let x = Matrix::new(3, 1, v.to_vec()).unwrap();
            matmul(&a, &x).unwrap().into_data()
        };
        let j = finite_diff_jacobian(f, &[1.0, -0.5, 2.0], 1e-3).unwrap();
        assert!(j.max_abs_diff(&a).unwrap() < 1e-10);
    }

    #[test]
    fn square_component() {
        let f = |v: &[f64]| vec![v[0] * v[0], v[1]];
        let j = finite_diff_jacobian(f, &[3.0, 1.0], 1e-4).unwrap();
        let expect = Matrix::from_rows(&[[6.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(j.max_abs_diff(&expect).unwrap() < 1e-6);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let f = |v: &[f64]| vec![v[0].sqrt()];
        assert!(matches!(finite_diff_jacobian(f, &[0.0], 1e-4), Err(Error::Evaluation(_))));
        assert!(matches!(finite_diff_jacobian(|v| v.to_vec(), &[1.0], 0.0), Err(Error::Parameter(_))));
    }
}
