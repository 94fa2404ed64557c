//! Dense linear algebra: the handful of kernels the rest of the crate needs.
//!
//! Permutation convention, used everywhere: applying a [`PermutationVec`] with
//! mapping `m` to a sequence `x` yields `y[i] = x[m[i]]` (a gather). For
//! matrices, [`permute_rows`] puts input row `m[i]` at output row `i`.

mod expm;
mod factor;
mod matrix;
mod perm;
mod svd;

pub use expm::matrix_exp;
pub use factor::{lu_solve, orthonormal_basis, qr_q, OrthoBasis};
pub(crate) use matrix::dot;
pub use matrix::{gemm, MatRef, Matrix};
pub use perm::{permute_cols, permute_rows, PermutationVec};
pub use svd::{operator_norm, svd_values};

use crate::{Error, Result, SeededRng};

/// Haar-distributed random orthogonal matrix: Q from the QR factorization of
/// a standard Gaussian matrix, with column signs fixed so that `diag(R) > 0`.
pub fn random_orthogonal(n: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::EmptyInput("random_orthogonal needs n >= 1"));
    }
    let g = Matrix::from_vec(n, n, rng.normals(n * n))?;
    Ok(qr_q(&g))
}
