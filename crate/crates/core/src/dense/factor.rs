//! LU solve, Householder QR and Gram-Schmidt bases.

use alloc::vec;
use alloc::vec::Vec;

use super::{dot, Matrix};
use crate::math;
use crate::{Error, Result};

/// Solves `a x = b` for square `a` by LU with partial pivoting; `b` may have
/// several columns.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n {
        return Err(Error::shape("lu_solve needs square a and matching b"));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs())).unwrap_or(k);
        if lu[(piv, k)] == 0.0 {
            return Err(Error::invalid("singular matrix in lu_solve"));
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            for j in 0..x.cols() {
                let t = x[(k, j)];
                x[(k, j)] = x[(piv, j)];
                x[(piv, j)] = t;
            }
        }
        let d = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / d;
            if f == 0.0 {
                continue;
            }
            lu[(i, k)] = f;
            for j in k + 1..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            for j in 0..x.cols() {
                x[(i, j)] -= f * x[(k, j)];
            }
        }
    }
    for k in (0..n).rev() {
        let d = lu[(k, k)];
        for j in 0..x.cols() {
            let mut s = x[(k, j)];
            for i in k + 1..n {
                s -= lu[(k, i)] * x[(i, j)];
            }
            x[(k, j)] = s / d;
        }
    }
    Ok(x)
}

/// Orthogonal factor of a Householder QR of square `a`, with columns signed
/// so that `R` has a non-negative diagonal.
pub fn qr_q(a: &Matrix) -> Matrix {
    let (m, n) = a.shape();
    // Columns of a, stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n.min(m));
    let mut signs = vec![1.0; n.min(m)];
    for k in 0..n.min(m) {
        let x = &cols[k][k..];
        let norm = math::sqrt(dot(x, x));
        let mut v = x.to_vec();
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = math::sqrt(dot(&v, &v));
        if vnorm > 0.0 {
            for e in &mut v {
                *e /= vnorm;
            }
        }
        // R[k][k] = alpha; flip the column sign later if negative.
        signs[k] = if alpha < 0.0 { -1.0 } else { 1.0 };
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let s = 2.0 * dot(&v, tail);
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= s * vi;
            }
        }
        reflectors.push(v);
    }
    // Q = H_0 H_1 ... applied to the identity's first n.min(m) columns.
    let r = n.min(m);
    let mut q = Matrix::zeros(m, r);
    for j in 0..r {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        for (k, v) in reflectors.iter().enumerate().rev() {
            let tail = &mut e[k..];
            let s = 2.0 * dot(v, tail);
            for (t, vi) in tail.iter_mut().zip(v) {
                *t -= s * vi;
            }
        }
        for i in 0..m {
            q[(i, j)] = e[i] * signs[j];
        }
    }
    q
}

/// Orthonormal basis for the span of a set of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoBasis {
    pub vectors: Vec<Vec<f64>>,
    /// Set when some input vectors were linearly dependent (numerically) on
    /// earlier ones and were dropped.
    pub rank_deficient: bool,
}

impl OrthoBasis {
    /// Norm of the orthogonal projection of `x` onto the span.
    pub fn projection_norm(&self, x: &[f64]) -> f64 {
        math::sqrt(
            self.vectors
                .iter()
                .map(|v| {
                    let c = dot(v, x);
                    c * c
                })
                .sum(),
        )
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. A vector whose
/// residual norm falls below `rel_tol` times its original norm is dropped.
pub fn orthonormal_basis(vectors: &[Vec<f64>], rel_tol: f64) -> OrthoBasis {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut rank_deficient = false;
    for v in vectors {
        let norm0 = math::sqrt(dot(v, v));
        if norm0 == 0.0 {
            rank_deficient = true;
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let norm = math::sqrt(dot(&w, &w));
        if norm <= rel_tol * norm0 {
            rank_deficient = true;
            continue;
        }
        for wi in &mut w {
            *wi /= norm;
        }
        basis.push(w);
    }
    OrthoBasis { vectors: basis, rank_deficient }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeededRng;

    #[test]
    fn solve_recovers_rhs() {
        let a = Matrix::from_rows(&[&[0.0, 2.0, 1.0], &[1.0, 1.0, 0.0], &[3.0, 0.0, 1.0]]).unwrap();
        let x = Matrix::from_rows(&[&[1.0], &[-2.0], &[0.5]]).unwrap();
        let b = a.matmul(&x).unwrap();
        assert!(lu_solve(&a, &b).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn singular_is_error() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        assert!(lu_solve(&a, &Matrix::identity(2)).is_err());
    }

    #[test]
    fn qr_q_is_orthogonal() {
        let mut rng = SeededRng::new(11);
        let a = Matrix::from_vec(6, 6, rng.normals(36)).unwrap();
        let q = qr_q(&a);
        let qtq = q.matmul_tn(&q).unwrap();
        assert!(qtq.max_abs_diff(&Matrix::identity(6)) < 1e-12);
    }

    #[test]
    fn basis_drops_dependent_vectors() {
        let vs = vec![vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
        let b = orthonormal_basis(&vs, 1e-10);
        assert_eq!(b.vectors.len(), 2);
        assert!(b.rank_deficient);
        assert!((b.projection_norm(&[3.0, 4.0, 12.0]) - 5.0).abs() < 1e-12);
    }
}
