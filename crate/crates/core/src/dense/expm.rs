//! Matrix exponential: scaling and squaring around the degree-13 diagonal
//! Padé approximant. The matrix is scaled by `2^-s` until its 1-norm is at
//! most `THETA_13`, where the [13/13] approximant is accurate to double
//! precision, and the result is squared `s` times.

use super::{lu_solve, Matrix};
use crate::math;
use crate::{Error, Result};

const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

pub fn matrix_exp(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::shape("matrix_exp needs a square matrix"));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let norm = m.norm_1();
    let s = if norm > THETA_13 { math::ceil(math::log2(norm / THETA_13)) as i32 } else { 0 };
    let a = m.scale(math::pow(2.0, -(s as f64)));
    let b = &PADE_13;
    let id = Matrix::identity(n);
    let a2 = a.matmul(&a)?;
    let a4 = a2.matmul(&a2)?;
    let a6 = a4.matmul(&a2)?;

    let lin = |c6: f64, c4: f64, c2: f64, c0: f64| -> Result<Matrix> {
        let mut out = a6.scale(c6);
        out.add_assign_scaled(&a4, c4)?;
        out.add_assign_scaled(&a2, c2)?;
        out.add_assign_scaled(&id, c0)?;
        Ok(out)
    };

    let mut u_inner = a6.matmul(&lin(b[13], b[11], b[9], 0.0)?)?;
    u_inner = u_inner.add(&lin(b[7], b[5], b[3], b[1])?)?;
    let u = a.matmul(&u_inner)?;
    let mut v = a6.matmul(&lin(b[12], b[10], b[8], 0.0)?)?;
    v = v.add(&lin(b[6], b[4], b[2], b[0])?)?;

    let mut r = lu_solve(&v.sub(&u)?, &v.add(&u)?)?;
    for _ in 0..s {
        r = r.matmul(&r)?;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gives_identity() {
        let e = matrix_exp(&Matrix::zeros(3, 3)).unwrap();
        assert!(e.max_abs_diff(&Matrix::identity(3)) < 1e-15);
    }

    #[test]
    fn diagonal() {
        let e = matrix_exp(&Matrix::from_diag(&[1.5, -0.25])).unwrap();
        assert!((e[(0, 0)] - 1.5f64.exp()).abs() < 1e-13);
        assert!((e[(1, 1)] - (-0.25f64).exp()).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn nilpotent() {
        let n = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let e = matrix_exp(&n).unwrap();
        let expect = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]).unwrap();
        assert!(e.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn large_norm_uses_squaring() {
        let e = matrix_exp(&Matrix::from_diag(&[10.0, -10.0])).unwrap();
        assert!((e[(0, 0)] / 10f64.exp() - 1.0).abs() < 1e-13);
        assert!((e[(1, 1)] / (-10f64).exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_generator() {
        let t = 0.7;
        let g = Matrix::from_rows(&[&[0.0, -t], &[t, 0.0]]).unwrap();
        let e = matrix_exp(&g).unwrap();
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-15);
        assert!((e[(1, 0)] - t.sin()).abs() < 1e-15);
    }

    #[test]
    fn non_square() {
        assert!(matrix_exp(&Matrix::zeros(2, 3)).is_err());
    }
}
