//! Token embeddings: one row per token (naive) or the sum of a pitch row and
//! a hand row (smart).

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::dense::Matrix;
use crate::math;
use crate::{Error, Result, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Naive,
    Smart,
}

/// Token `t` factors as `(pitch_map[t], hand_map[t])`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub mode: EmbeddingMode,
    pub d: usize,
    pub pitch_map: Vec<usize>,
    pub hand_map: Vec<usize>,
    pub pitch_card: usize,
    pub hand_card: usize,
}

impl EmbeddingSpec {
    pub fn new(
        mode: EmbeddingMode,
        d: usize,
        pitch_map: Vec<usize>,
        hand_map: Vec<usize>,
        pitch_card: usize,
        hand_card: usize,
    ) -> Result<Self> {
        let s = Self { mode, d, pitch_map, hand_map, pitch_card, hand_card };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("embedding dimension is zero"));
        }
        if self.pitch_map.is_empty() || self.pitch_map.len() != self.hand_map.len() {
            return Err(Error::shape("factor maps must be non-empty and of equal length"));
        }
        if self.pitch_map.iter().any(|&p| p >= self.pitch_card) || self.hand_map.iter().any(|&h| h >= self.hand_card) {
            return Err(Error::invalid("factor map entry exceeds its cardinality"));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.pitch_map.len()
    }

    pub fn rows(&self) -> usize {
        match self.mode {
            EmbeddingMode::Naive => self.vocab_size(),
            EmbeddingMode::Smart => self.pitch_card + self.hand_card,
        }
    }

    pub fn param_count(&self) -> usize {
        self.rows() * self.d
    }

    fn check_token(&self, t: usize) -> Result<()> {
        if t >= self.vocab_size() {
            return Err(Error::TokenOutOfRange { token: t, vocab: self.vocab_size() });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EmbeddingTables {
    Naive { table: Matrix },
    Smart { pitch: Matrix, hand: Matrix },
}

impl EmbeddingTables {
    fn zeros(spec: &EmbeddingSpec) -> Self {
        match spec.mode {
            EmbeddingMode::Naive => Self::Naive { table: Matrix::zeros(spec.vocab_size(), spec.d) },
            EmbeddingMode::Smart => Self::Smart {
                pitch: Matrix::zeros(spec.pitch_card, spec.d),
                hand: Matrix::zeros(spec.hand_card, spec.d),
            },
        }
    }

    fn matches(&self, spec: &EmbeddingSpec) -> bool {
        match (self, spec.mode) {
            (Self::Naive { table }, EmbeddingMode::Naive) => table.shape() == (spec.vocab_size(), spec.d),
            (Self::Smart { pitch, hand }, EmbeddingMode::Smart) => {
                pitch.shape() == (spec.pitch_card, spec.d) && hand.shape() == (spec.hand_card, spec.d)
            }
            _ => false,
        }
    }

    /// Rows with any non-zero entry, as `(table, row)`; table 0 is the naive
    /// or pitch table, table 1 the hand table.
    pub fn nonzero_rows(&self) -> Vec<(usize, usize)> {
        let scan = |m: &Matrix, t: usize| -> Vec<(usize, usize)> {
            (0..m.rows()).filter(|&r| m.row(r).iter().any(|&v| v != 0.0)).map(|r| (t, r)).collect()
        };
        match self {
            Self::Naive { table } => scan(table, 0),
            Self::Smart { pitch, hand } => {
                let mut v = scan(pitch, 0);
                v.extend(scan(hand, 1));
                v
            }
        }
    }
}

impl ParamSet for EmbeddingTables {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Self::Naive { table } => alloc::vec![table.as_slice()],
            Self::Smart { pitch, hand } => alloc::vec![pitch.as_slice(), hand.as_slice()],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Self::Naive { table } => alloc::vec![table.as_mut_slice()],
            Self::Smart { pitch, hand } => alloc::vec![pitch.as_mut_slice(), hand.as_mut_slice()],
        }
    }

    fn tensor_owners(&self) -> Vec<usize> {
        match self {
            Self::Naive { .. } => alloc::vec![0],
            Self::Smart { .. } => alloc::vec![0, 1],
        }
    }
}

/// He initialization, `N(0, 2 / rows)` for every table.
pub fn init_embedding(spec: &EmbeddingSpec, rng: &mut SeededRng) -> Result<EmbeddingTables> {
    spec.validate()?;
    let mut t = EmbeddingTables::zeros(spec);
    for s in t.tensors_mut() {
        let rows = s.len() / spec.d;
        let std = math::sqrt(2.0 / rows as f64);
        s.iter_mut().for_each(|v| *v = std * rng.normal());
    }
    Ok(t)
}

/// One embedding row per token.
pub fn embed(spec: &EmbeddingSpec, tables: &EmbeddingTables, tokens: &[usize]) -> Result<Matrix> {
    if !tables.matches(spec) {
        return Err(Error::shape("embedding tables do not match spec"));
    }
    let mut out = Matrix::zeros(tokens.len(), spec.d);
    for (i, &t) in tokens.iter().enumerate() {
        spec.check_token(t)?;
        let row = out.row_mut(i);
        match tables {
            EmbeddingTables::Naive { table } => row.copy_from_slice(table.row(t)),
            EmbeddingTables::Smart { pitch, hand } => {
                for ((o, a), b) in row.iter_mut().zip(pitch.row(spec.pitch_map[t])).zip(hand.row(spec.hand_map[t])) {
                    *o = a + b;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of the tables given the gradient of the embedded rows.
pub fn embed_backward(spec: &EmbeddingSpec, tokens: &[usize], grad: &Matrix) -> Result<EmbeddingTables> {
    spec.validate()?;
    if grad.shape() != (tokens.len(), spec.d) {
        return Err(Error::shape("embedding gradient shape differs from tokens x d"));
    }
    let mut g = EmbeddingTables::zeros(spec);
    for (i, &t) in tokens.iter().enumerate() {
        spec.check_token(t)?;
        let src = grad.row(i);
        let add = |m: &mut Matrix, r: usize| m.row_mut(r).iter_mut().zip(src).for_each(|(a, b)| *a += b);
        match &mut g {
            EmbeddingTables::Naive { table } => add(table, t),
            EmbeddingTables::Smart { pitch, hand } => {
                add(pitch, spec.pitch_map[t]);
                add(hand, spec.hand_map[t]);
            }
        }
    }
    Ok(g)
}

/// Parameter bookkeeping of naive versus factorized embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingComparison {
    pub naive_rows: usize,
    pub smart_rows: usize,
    pub naive_params: usize,
    pub smart_params: usize,
    /// `(naive - smart) / naive`; negative when factorizing adds rows.
    pub reduction: f64,
    /// `sqrt(smart_rows / naive_rows)`, the ratio of the norm-based
    /// complexity bounds.
    pub rademacher_ratio: f64,
    pub negative_savings: bool,
}

pub fn embedding_comparison(
    naive_rows: usize,
    pitch_card: usize,
    hand_card: usize,
    d: usize,
) -> Result<EmbeddingComparison> {
    if naive_rows == 0 || d == 0 {
        return Err(Error::ZeroDivisor("empty vocabulary or zero embedding dimension"));
    }
    let smart_rows = pitch_card + hand_card;
    let reduction = (naive_rows as f64 - smart_rows as f64) / naive_rows as f64;
    Ok(EmbeddingComparison {
        naive_rows,
        smart_rows,
        naive_params: naive_rows * d,
        smart_params: smart_rows * d,
        reduction,
        rademacher_ratio: math::sqrt(smart_rows as f64 / naive_rows as f64),
        negative_savings: reduction < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(mode: EmbeddingMode) -> EmbeddingSpec {
        // 3 pitches x 2 hands.
        let pm = (0..6).map(|t| t / 2).collect();
        let hm = (0..6).map(|t| t % 2).collect();
        EmbeddingSpec::new(mode, 4, pm, hm, 3, 2).unwrap()
    }

    #[test]
    fn smart_is_sum_of_factors() {
        let spec = grid(EmbeddingMode::Smart);
        let t = init_embedding(&spec, &mut SeededRng::new(1)).unwrap();
        let e = embed(&spec, &t, &[5]).unwrap();
        let EmbeddingTables::Smart { pitch, hand } = &t else { unreachable!() };
        for j in 0..4 {
            assert_eq!(e[(0, j)], pitch[(2, j)] + hand[(1, j)]);
        }
        assert_eq!(spec.param_count(), 20);
        assert_eq!(grid(EmbeddingMode::Naive).param_count(), 24);
    }

    #[test]
    fn out_of_range_token() {
        let spec = grid(EmbeddingMode::Naive);
        let t = init_embedding(&spec, &mut SeededRng::new(1)).unwrap();
        assert_eq!(embed(&spec, &t, &[6]), Err(Error::TokenOutOfRange { token: 6, vocab: 6 }));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn backward_matches_finite_differences() {
        let spec = grid(EmbeddingMode::Smart);
        let mut t = init_embedding(&spec, &mut SeededRng::new(2)).unwrap();
        let tokens = [0, 3, 3, 5];
        let target = Matrix::from_vec(4, 4, SeededRng::new(3).normals(16)).unwrap();
        let loss =
            |t: &EmbeddingTables| 0.5 * embed(&spec, t, &tokens).unwrap().sub(&target).unwrap().frobenius_norm_sq();
        let resid = embed(&spec, &t, &tokens).unwrap().sub(&target).unwrap();
        let g = embed_backward(&spec, &tokens, &resid).unwrap();
        let analytic: Vec<Vec<f64>> = g.tensors().iter().map(|s| s.to_vec()).collect();
        for (ti, a) in analytic.iter().enumerate() {
            for k in 0..a.len() {
                let orig = t.tensors()[ti][k];
                t.tensors_mut()[ti][k] = orig + 1e-6;
                let up = loss(&t);
                t.tensors_mut()[ti][k] = orig - 1e-6;
                let dn = loss(&t);
                t.tensors_mut()[ti][k] = orig;
                assert!(((up - dn) / 2e-6 - a[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn comparison_numbers() {
        let c = embedding_comparison(176, 88, 3, 64).unwrap();
        assert_eq!(c.smart_rows, 91);
        assert!((c.reduction - 85.0 / 176.0).abs() < 1e-15);
        assert!((c.rademacher_ratio - 0.7191).abs() < 1e-4);
        let tiny = embedding_comparison(1, 1, 1, 8).unwrap();
        assert_eq!(tiny.reduction, -1.0);
        assert!(tiny.negative_savings);
    }
}
