use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

/// A bijection on `0..n`, applied as a gather: `apply(x)[i] = x[mapping[i]]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PermutationVec {
    mapping: Vec<usize>,
}

impl PermutationVec {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(Error::invalid(format!("not a permutation of 0..{n}")));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub(crate) fn from_mapping_unchecked(mapping: Vec<usize>) -> Self {
        debug_assert!(Self::new(mapping.clone()).is_ok());
        Self { mapping }
    }

    pub fn identity(n: usize) -> Self {
        Self { mapping: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// The permutation equal to applying `self` first and `next` second.
    pub fn then(&self, next: &PermutationVec) -> Result<Self> {
        if self.len() != next.len() {
            return Err(Error::shape("composing permutations of different lengths"));
        }
        Ok(Self { mapping: next.mapping.iter().map(|&j| self.mapping[j]).collect() })
    }

    pub fn apply<T: Clone>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.len() {
            return Err(Error::shape(format!("permutation of length {} applied to {} items", self.len(), x.len())));
        }
        Ok(self.mapping.iter().map(|&m| x[m].clone()).collect())
    }

    /// Dense 0/1 matrix `P` with `P x = apply(x)`.
    pub fn to_matrix(&self) -> Matrix {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in self.mapping.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }
}

impl TryFrom<Vec<usize>> for PermutationVec {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PermutationVec> for Vec<usize> {
    fn from(p: PermutationVec) -> Self {
        p.mapping
    }
}

/// Output row `i` is input row `p.mapping()[i]`.
pub fn permute_rows(m: &Matrix, p: &PermutationVec) -> Result<Matrix> {
    if p.len() != m.rows() {
        return Err(Error::shape("permutation length differs from row count"));
    }
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for (i, &src) in p.mapping().iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(src));
    }
    Ok(out)
}

/// Output column `j` is input column `p.mapping()[j]`.
pub fn permute_cols(m: &Matrix, p: &PermutationVec) -> Result<Matrix> {
    if p.len() != m.cols() {
        return Err(Error::shape("permutation length differs from column count"));
    }
    Ok(m.select_cols(p.mapping()))
}
