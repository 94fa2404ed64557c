//! Discrete information measures, all in bits.
//!
//! Joint distributions are carried as integer count tables
//! ([`JointHistogram`]) and normalized on demand. Entropy sums run over the
//! cell probabilities in sorted order, so relabeling categories or
//! transposing a table gives bit-identical results.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::math;
use crate::{Error, Result};

/// Tolerance on `sum(p) == 1` accepted by [`entropy`].
const MASS_TOL: f64 = 1e-9;

/// Shannon entropy in bits; `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::NegativeMass);
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::invalid(format!("distribution sums to {total}, not 1")));
    }
    Ok(entropy_sorted(p.to_vec()))
}

fn entropy_sorted(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * math::log2(v)).sum::<f64>()
}

fn entropy_of_counts(counts: impl Iterator<Item = u64>, total: u64) -> f64 {
    let mut c: Vec<u64> = counts.filter(|&c| c > 0).collect();
    c.sort_unstable();
    let t = total as f64;
    -c.iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * math::log2(p)
        })
        .sum::<f64>()
}

/// Counts over pairs `(x, y)` with `x < card_x`, `y < card_y`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointHistogram {
    card_x: usize,
    card_y: usize,
    counts: Vec<u64>,
    total: u64,
}

impl JointHistogram {
    pub fn new(card_x: usize, card_y: usize) -> Self {
        Self { card_x, card_y, counts: vec![0; card_x * card_y], total: 0 }
    }

    /// Row-major counts, `counts[x * card_y + y]`.
    pub fn from_counts(card_x: usize, card_y: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != card_x * card_y {
            return Err(Error::shape("count table size differs from card_x * card_y"));
        }
        let total = counts.iter().sum();
        Ok(Self { card_x, card_y, counts, total })
    }

    pub fn from_pairs(card_x: usize, card_y: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut h = Self::new(card_x, card_y);
        for (x, y) in pairs {
            h.add(x, y)?;
        }
        Ok(h)
    }

    pub fn add(&mut self, x: usize, y: usize) -> Result<()> {
        if x >= self.card_x || y >= self.card_y {
            return Err(Error::invalid(format!("cell ({x}, {y}) outside {}x{}", self.card_x, self.card_y)));
        }
        self.counts[x * self.card_y + y] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn card_x(&self) -> usize {
        self.card_x
    }

    pub fn card_y(&self) -> usize {
        self.card_y
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, x: usize, y: usize) -> u64 {
        self.counts[x * self.card_y + y]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0; self.counts.len()];
        for x in 0..self.card_x {
            for y in 0..self.card_y {
                counts[y * self.card_x + x] = self.count(x, y);
            }
        }
        Self { card_x: self.card_y, card_y: self.card_x, counts, total: self.total }
    }

    pub fn marginal_x_counts(&self) -> Vec<u64> {
        (0..self.card_x).map(|x| (0..self.card_y).map(|y| self.count(x, y)).sum()).collect()
    }

    pub fn marginal_y_counts(&self) -> Vec<u64> {
        (0..self.card_y).map(|y| (0..self.card_x).map(|x| self.count(x, y)).sum()).collect()
    }

    fn require_mass(&self) -> Result<()> {
        if self.total == 0 {
            Err(Error::EmptyInput("joint histogram has no counts"))
        } else {
            Ok(())
        }
    }

    pub fn probabilities(&self) -> Result<Vec<f64>> {
        self.require_mass()?;
        let t = self.total as f64;
        Ok(self.counts.iter().map(|&c| c as f64 / t).collect())
    }

    pub fn marginal_x(&self) -> Result<Vec<f64>> {
        self.require_mass()?;
        let t = self.total as f64;
        Ok(self.marginal_x_counts().iter().map(|&c| c as f64 / t).collect())
    }

    pub fn marginal_y(&self) -> Result<Vec<f64>> {
        self.require_mass()?;
        let t = self.total as f64;
        Ok(self.marginal_y_counts().iter().map(|&c| c as f64 / t).collect())
    }

    pub fn entropy_x(&self) -> Result<f64> {
        self.require_mass()?;
        Ok(entropy_of_counts(self.marginal_x_counts().into_iter(), self.total))
    }

    pub fn entropy_y(&self) -> Result<f64> {
        self.require_mass()?;
        Ok(entropy_of_counts(self.marginal_y_counts().into_iter(), self.total))
    }

    pub fn entropy_joint(&self) -> Result<f64> {
        self.require_mass()?;
        Ok(entropy_of_counts(self.counts.iter().copied(), self.total))
    }
}

/// `I(X;Y) = H(X) + H(Y) - H(X,Y)`, clamped at zero against rounding.
pub fn mutual_information(j: &JointHistogram) -> Result<f64> {
    let mi = j.entropy_x()? + j.entropy_y()? - j.entropy_joint()?;
    Ok(mi.max(0.0))
}

/// NMI with its degeneracy flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nmi {
    pub value: f64,
    /// Exactly one marginal was constant; `value` is defined as 0.
    pub degenerate: bool,
}

/// `2 I(X;Y) / (H(X) + H(Y))`. A constant variable shares no information, so
/// a single zero-entropy marginal yields 0 with `degenerate` set; two constant
/// marginals leave the ratio undefined.
pub fn nmi(j: &JointHistogram) -> Result<Nmi> {
    let hx = j.entropy_x()?;
    let hy = j.entropy_y()?;
    match (hx > 0.0, hy > 0.0) {
        (false, false) => Err(Error::UndefinedNmi),
        (true, true) => {
            let mi = (hx + hy - j.entropy_joint()?).max(0.0);
            Ok(Nmi { value: (2.0 * mi / (hx + hy)).clamp(0.0, 1.0), degenerate: false })
        }
        _ => Ok(Nmi { value: 0.0, degenerate: true }),
    }
}

/// `D_KL(P || q_x ⊗ q_y)` in bits. Infinite when `P` puts mass where the
/// product does not.
pub fn kl_to_product(j: &JointHistogram, qx: &[f64], qy: &[f64]) -> Result<f64> {
    if qx.len() != j.card_x || qy.len() != j.card_y {
        return Err(Error::shape("factor lengths differ from the histogram cardinalities"));
    }
    let p = j.probabilities()?;
    let mut terms = Vec::new();
    for x in 0..j.card_x {
        for y in 0..j.card_y {
            let pxy = p[x * j.card_y + y];
            if pxy == 0.0 {
                continue;
            }
            let q = qx[x] * qy[y];
            if q <= 0.0 {
                return Ok(f64::INFINITY);
            }
            terms.push(pxy * math::log2(pxy / q));
        }
    }
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}

/// Loss of the best product approximation, `D_KL(P || P_X ⊗ P_Y)`, evaluated
/// directly from the cell ratios rather than through entropies.
pub fn factorization_loss(j: &JointHistogram) -> Result<f64> {
    let px = j.marginal_x()?;
    let py = j.marginal_y()?;
    kl_to_product(j, &px, &py)
}

/// Symmetric NMI table over features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmiMatrix {
    dim: usize,
    values: Vec<f64>,
    /// Features whose binned entropy is zero.
    constant: Vec<bool>,
}

impl NmiMatrix {
    /// Validates symmetry, unit diagonal and the `[0, 1]` range.
    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::shape("NMI table is not dim x dim"));
        }
        for i in 0..dim {
            if (values[i * dim + i] - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("NMI diagonal must be 1"));
            }
            for j in 0..dim {
                let v = values[i * dim + j];
                if !(-1e-9..=1.0 + 1e-9).contains(&v) || (v - values[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::invalid(format!("NMI entry ({i}, {j}) = {v} invalid")));
                }
            }
        }
        Ok(Self { dim, values, constant: vec![false; dim] })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn constant_features(&self) -> &[bool] {
        &self.constant
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }
}

/// Equal-frequency bin index for every sample. Ties share the bin of their
/// first rank, so a constant column lands in a single bin.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    let mut rank = 0;
    while rank < n {
        let v = values[order[rank]];
        let bin = rank * bins / n;
        let mut end = rank;
        while end < n && values[order[end]] == v {
            out[order[end]] = bin;
            end += 1;
        }
        rank = end;
    }
    out
}

/// Pairwise NMI of the columns of `data` (samples x features), each column
/// discretized into `bins` equal-frequency bins.
pub fn pairwise_nmi(data: &Matrix, bins: usize) -> Result<NmiMatrix> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::invalid("pairwise_nmi needs at least 2 samples"));
    }
    if bins < 2 {
        return Err(Error::invalid("pairwise_nmi needs at least 2 bins"));
    }
    let binned: Vec<Vec<u16>> =
        (0..d).map(|j| equal_frequency_bins(&data.col(j), bins).into_iter().map(|b| b as u16).collect()).collect();
    let marginal: Vec<f64> = binned
        .iter()
        .map(|col| {
            let mut c = vec![0u64; bins];
            for &b in col {
                c[b as usize] += 1;
            }
            entropy_of_counts(c.into_iter(), n as u64)
        })
        .collect();
    let constant: Vec<bool> = marginal.iter().map(|&h| h == 0.0).collect();

    let mut values = vec![0.0; d * d];
    let mut cells = vec![0u64; bins * bins];
    for i in 0..d {
        values[i * d + i] = 1.0;
        for j in i + 1..d {
            let v = if constant[i] || constant[j] {
                0.0
            } else {
                cells.iter_mut().for_each(|c| *c = 0);
                for (&a, &b) in binned[i].iter().zip(&binned[j]) {
                    cells[a as usize * bins + b as usize] += 1;
                }
                let hxy = entropy_of_counts(cells.iter().copied(), n as u64);
                let (hx, hy) = (marginal[i], marginal[j]);
                let mi = (hx + hy - hxy).max(0.0);
                (2.0 * mi / (hx + hy)).clamp(0.0, 1.0)
            };
            values[i * d + j] = v;
            values[j * d + i] = v;
        }
    }
    Ok(NmiMatrix { dim: d, values, constant })
}
