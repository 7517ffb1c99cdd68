//! Dense linear algebra, stable softmax, seeded randomness, a reverse-mode
//! tape and the finite-difference oracle.

mod finite_diff;
mod matrix;
mod rng;
mod tape;

pub use finite_diff::{
    finite_diff_gradient, finite_diff_jacobian, finite_diff_jacobian_scaled, relative_error,
};
pub use matrix::{dot, matmul, matmul_transposed, norm2, softmax, softmax_in_place, softmax_rows, Matrix};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
