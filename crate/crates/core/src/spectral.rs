//! Rank and efficiency diagnostics over singular spectra, plus the
//! commutator and operator-splitting error used to study alternating
//! block/permutation products.
//!
//! The entropy inside the effective rank uses natural logarithms, paired with
//! `exp`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dense::{matrix_exp, operator_norm, svd_values, Matrix};
use crate::math;
use crate::{Error, Result};

fn validate_spectrum(sigma: &[f64]) -> Result<f64> {
    if sigma.is_empty() {
        return Err(Error::EmptyInput("empty spectrum"));
    }
    if sigma.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::invalid("singular values must be finite and non-negative"));
    }
    let total: f64 = sigma.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(total)
}

/// `exp(H(p))` with `p_i = sigma_i / sum(sigma)`. A flat spectrum returns its
/// support size exactly.
pub fn effrank_entropy(sigma: &[f64]) -> Result<f64> {
    let total = validate_spectrum(sigma)?;
    let positive: Vec<f64> = sigma.iter().copied().filter(|&s| s > 0.0).collect();
    if positive.iter().all(|&s| s == positive[0]) {
        return Ok(positive.len() as f64);
    }
    let h: f64 = -positive
        .iter()
        .map(|&s| {
            let p = s / total;
            p * math::ln(p)
        })
        .sum::<f64>();
    Ok(math::exp(h).clamp(1.0, positive.len() as f64))
}

/// Smallest `k` whose top-`k` squared singular values hold at least 95% of
/// the total energy. The comparison `20 * cum >= 19 * total` keeps exact ties
/// on the qualifying side. Expects a descending spectrum.
pub fn effrank_95(sigma: &[f64]) -> Result<usize> {
    validate_spectrum(sigma)?;
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut cum = 0.0;
    for (k, s) in sigma.iter().enumerate() {
        cum += s * s;
        if 20.0 * cum >= 19.0 * total {
            return Ok(k + 1);
        }
    }
    Ok(sigma.len())
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(svd_values(m)?.iter().sum())
}

/// `effrank / (param_count / d)`.
pub fn utilization_eta(effrank: f64, param_count: usize, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::ZeroDivisor("embedding dimension is zero"));
    }
    if param_count == 0 {
        return Err(Error::ZeroDivisor("parameter count is zero"));
    }
    Ok(effrank / (param_count as f64 / d as f64))
}

fn require_square_pair(x: &Matrix, y: &Matrix) -> Result<()> {
    if !x.is_square() || x.shape() != y.shape() {
        return Err(Error::shape("expected two square matrices of the same size"));
    }
    Ok(())
}

/// Spectral norm of `XY - YX`.
pub fn commutator_norm(x: &Matrix, y: &Matrix) -> Result<f64> {
    require_square_pair(x, y)?;
    let c = x.matmul(y)?.sub(&y.matmul(x)?)?;
    operator_norm(&c)
}

/// `|| e^{X+Y} - (e^{X/n} e^{Y/n})^n ||` in the spectral norm.
pub fn trotter_error(x: &Matrix, y: &Matrix, n: usize) -> Result<f64> {
    require_square_pair(x, y)?;
    if n == 0 {
        return Err(Error::invalid("trotter_error needs n >= 1"));
    }
    let exact = matrix_exp(&x.add(y)?)?;
    let inv = 1.0 / n as f64;
    let step = matrix_exp(&x.scale(inv))?.matmul(&matrix_exp(&y.scale(inv))?)?;
    let mut prod = step.clone();
    for _ in 1..n {
        prod = prod.matmul(&step)?;
    }
    operator_norm(&exact.sub(&prod)?)
}

/// Upper bound `C / (2n) * exp(||X|| + ||Y||)` with `C` the commutator norm.
pub fn trotter_bound(x: &Matrix, y: &Matrix, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("trotter_bound needs n >= 1"));
    }
    let c = commutator_norm(x, y)?;
    Ok(c / (2.0 * n as f64) * math::exp(operator_norm(x)? + operator_norm(y)?))
}

/// Spectral summary of one analyzed matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub effrank_entropy: f64,
    pub effrank_95: usize,
    pub nuclear_norm: f64,
    /// `effrank_95 / params_normalized`.
    pub utilization_eta: f64,
    /// Parameter count divided by the embedding dimension.
    pub params_normalized: f64,
    /// `nuclear_norm / params_normalized`.
    pub normalized_nuclear_norm: f64,
    pub spectrum_len: usize,
}

impl SpectrumReport {
    pub fn from_spectrum(sigma: &[f64], param_count: usize, d: usize) -> Result<Self> {
        let effrank_entropy = effrank_entropy(sigma)?;
        let effrank_95 = effrank_95(sigma)?;
        let nuclear_norm: f64 = sigma.iter().sum();
        let utilization_eta = utilization_eta(effrank_95 as f64, param_count, d)?;
        let params_normalized = param_count as f64 / d as f64;
        Ok(Self {
            effrank_entropy,
            effrank_95,
            nuclear_norm,
            utilization_eta,
            params_normalized,
            normalized_nuclear_norm: nuclear_norm / params_normalized,
            spectrum_len: sigma.len(),
        })
    }

    pub fn analyze(m: &Matrix, param_count: usize, d: usize) -> Result<Self> {
        Self::from_spectrum(&svd_values(m)?, param_count, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effrank_examples() {
        assert_eq!(effrank_entropy(&[1.0; 7]).unwrap(), 7.0);
        assert_eq!(effrank_entropy(&[5.0, 0.0, 0.0]).unwrap(), 1.0);
        let h: f64 = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        let r = effrank_entropy(&[3.0, 1.0]).unwrap();
        assert!((r - h.exp()).abs() < 1e-14);
        assert!((r - 1.7548).abs() < 1e-4);
    }

    #[test]
    fn degenerate_spectrum() {
        assert_eq!(effrank_entropy(&[0.0, 0.0]), Err(Error::DegenerateSpectrum));
        assert_eq!(effrank_95(&[0.0]), Err(Error::DegenerateSpectrum));
    }

    #[test]
    fn effrank_95_examples() {
        assert_eq!(effrank_95(&[1.0]).unwrap(), 1);
        assert_eq!(effrank_95(&[1.0; 100]).unwrap(), 95);
        assert_eq!(effrank_95(&[10.0, 1.0, 1.0]).unwrap(), 1);
    }

    #[test]
    fn nuclear_norm_examples() {
        assert!((nuclear_norm(&Matrix::identity(5)).unwrap() - 5.0).abs() < 1e-14);
        assert!((nuclear_norm(&Matrix::from_diag(&[3.0, 4.0])).unwrap() - 7.0).abs() < 1e-14);
    }

    #[test]
    fn eta_examples() {
        let smart = utilization_eta(705.0, 91 * 64, 64).unwrap();
        assert!((smart - 705.0 / 91.0).abs() < 1e-12);
        assert!((smart - 7.75).abs() < 0.005);
        let naive = utilization_eta(693.0, 176 * 64, 64).unwrap();
        assert!((naive - 3.9375).abs() < 1e-12);
        assert_eq!(utilization_eta(12.0, 12 * 3, 3).unwrap(), 1.0);
        assert!(utilization_eta(1.0, 0, 3).is_err());
        assert!(utilization_eta(1.0, 3, 0).is_err());
    }

    #[test]
    fn commutator_examples() {
        let a = Matrix::from_diag(&[1.0, 2.0]);
        let b = Matrix::from_diag(&[-3.0, 0.5]);
        assert_eq!(commutator_norm(&a, &b).unwrap(), 0.0);
        let x = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 0.0]]).unwrap();
        assert!((commutator_norm(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(commutator_norm(&x, &y).unwrap(), commutator_norm(&y, &x).unwrap());
        assert!(commutator_norm(&x, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn commuting_trotter_is_exact() {
        let a = Matrix::from_diag(&[0.3, -0.2, 0.1]);
        let b = Matrix::from_diag(&[-0.5, 0.4, 0.9]);
        for n in [1, 2, 5] {
            assert!(trotter_error(&a, &b, n).unwrap() < 1e-8);
        }
        assert!(trotter_error(&a, &b, 0).is_err());
    }

    #[test]
    fn report_fields() {
        let r = SpectrumReport::from_spectrum(&[2.0, 2.0], 8, 4).unwrap();
        assert_eq!(r.effrank_entropy, 2.0);
        assert_eq!(r.effrank_95, 2);
        assert_eq!(r.params_normalized, 2.0);
        assert_eq!(r.utilization_eta, 1.0);
        assert_eq!(r.normalized_nuclear_norm, 2.0);
    }
}
