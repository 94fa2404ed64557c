//! Singular values by one-sided (Hestenes) Jacobi rotations.
//!
//! The shorter dimension's vectors are orthogonalized pairwise until every
//! pair is orthogonal to working precision; the singular values are then the
//! vector norms. Accuracy is high in the relative sense and no external
//! LAPACK is needed.

use alloc::vec::Vec;

use super::{dot, Matrix};
use crate::math;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// All `min(rows, cols)` singular values, sorted descending.
pub fn svd_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::EmptyInput("svd of an empty matrix"));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    // Rows of `work` are the vectors to orthogonalize: the columns of `m` when
    // it is tall, its rows when it is wide.
    let work = if m.rows() >= m.cols() { m.transpose() } else { m.clone() };
    let k = work.rows();
    let len = work.cols();
    let mut buf = work.into_vec();

    let mut norms: Vec<f64> = (0..k).map(|i| row_norm_sq(&buf, i, len)).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (head, tail) = buf.split_at_mut(q * len);
                let vp = &mut head[p * len..(p + 1) * len];
                let vq = &mut tail[..len];
                let gamma = dot(vp, vq);
                if gamma.abs() <= ORTHO_TOL * math::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + math::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                for (a, b) in vp.iter_mut().zip(vq.iter_mut()) {
                    let x = *a;
                    let y = *b;
                    *a = c * x - s * y;
                    *b = s * x + c * y;
                }
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        // Refresh the running norms to stop drift from the update formulas.
        for (i, n) in norms.iter_mut().enumerate() {
            *n = row_norm_sq(&buf, i, len);
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> = norms.iter().map(|&n| math::sqrt(n.max(0.0))).collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(sigma)
}

fn row_norm_sq(buf: &[f64], i: usize, len: usize) -> f64 {
    let r = &buf[i * len..(i + 1) * len];
    dot(r, r)
}

/// Largest singular value (spectral norm).
pub fn operator_norm(m: &Matrix) -> Result<f64> {
    Ok(svd_values(m)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::random_orthogonal;
    use crate::SeededRng;

    #[test]
    fn diagonal() {
        let s = svd_values(&Matrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(s, vec![3.0, 1.0]);
    }

    #[test]
    fn orthogonal_has_unit_spectrum() {
        let mut rng = SeededRng::new(5);
        let q = random_orthogonal(7, &mut rng).unwrap();
        for s in svd_values(&q).unwrap() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_and_tall_agree() {
        let mut rng = SeededRng::new(9);
        let m = Matrix::from_vec(3, 7, rng.normals(21)).unwrap();
        let a = svd_values(&m).unwrap();
        let b = svd_values(&m.transpose()).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]).unwrap();
        let s = svd_values(&m).unwrap();
        assert!((s[0] - (5.0f64 * 14.0).sqrt()).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(svd_values(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn operator_norm_of_diag() {
        assert_eq!(operator_norm(&Matrix::from_diag(&[2.0, -5.0])).unwrap(), 5.0);
        assert!((operator_norm(&Matrix::identity(4)).unwrap() - 1.0).abs() < 1e-15);
    }
}
