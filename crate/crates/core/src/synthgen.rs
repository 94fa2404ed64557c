//! Deterministic synthetic regression tasks and joint distributions.
//!
//! A task is fully determined by its [`TaskSpec`]. Ground-truth maps come
//! from stream 0 of the task seed, the validation set from stream 1, a fixed
//! training pool (when `train_n > 0`) from stream 2, and the batch for
//! training step `s` from stream `BATCH_STREAM_BASE + s`. Training and
//! validation samples therefore never share draws.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Hand, NoteEvent, Piece, PITCH_MAX, PITCH_MIN};
use crate::dense::{operator_norm, random_orthogonal, Matrix, PermutationVec};
use crate::info::JointHistogram;
use crate::math;
use crate::topology::BlockPartition;
use crate::training::Task;
use crate::{Error, Result, SeededRng};

pub const ANALYSIS_STREAM: u64 = 3;
pub const BATCH_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `y = Q x + noise`, `Q` Haar-orthogonal.
    HighrankRecovery,
    /// Independent groups of correlated features; each output group is a
    /// linear image of its input group.
    ExtremeModular,
    /// Inputs on a union of low-dimensional group subspaces; the target is
    /// the input.
    FactorizedManifold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dim: usize,
    pub groups: usize,
    pub noise_sigma: f64,
    /// Hide the group layout behind a fixed random feature permutation.
    pub scramble: bool,
    pub seed: u64,
    /// Size of a fixed training pool; 0 draws fresh samples every step.
    pub train_n: usize,
    pub val_n: usize,
    /// Within-group latent correlation for [`TaskKind::ExtremeModular`].
    #[serde(default = "default_correlation")]
    pub correlation: f64,
}

fn default_correlation() -> f64 {
    0.6
}

impl TaskSpec {
    pub fn new(kind: TaskKind, dim: usize, groups: usize, seed: u64) -> Self {
        Self {
            kind,
            dim,
            groups,
            noise_sigma: 0.01,
            scramble: false,
            seed,
            train_n: 0,
            val_n: 1024,
            correlation: default_correlation(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.val_n == 0 {
            return Err(Error::invalid("task dimension and validation size must be positive"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be finite and non-negative"));
        }
        if self.kind != TaskKind::HighrankRecovery && (self.groups == 0 || !self.dim.is_multiple_of(self.groups)) {
            return Err(Error::invalid(format!(
                "{} features do not split into {} equal groups",
                self.dim, self.groups
            )));
        }
        if self.kind == TaskKind::FactorizedManifold && self.dim / self.groups < 2 {
            return Err(Error::invalid("factorized manifold groups need at least 2 features"));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::invalid("correlation must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Law {
    Orthogonal(Matrix),
    Modular(Vec<Matrix>),
    Manifold(Vec<Matrix>),
}

/// A generated task: ground truth plus a fixed validation set.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    spec: TaskSpec,
    law: Law,
    scramble: PermutationVec,
    val: (Matrix, Matrix),
    pool: Option<(Matrix, Matrix)>,
}

pub fn generate(spec: &TaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut rng = SeededRng::with_stream(spec.seed, 0);
    let d = spec.dim;
    let law = match spec.kind {
        TaskKind::HighrankRecovery => Law::Orthogonal(random_orthogonal(d, &mut rng)?),
        TaskKind::ExtremeModular => {
            let m = d / spec.groups;
            let mut maps = Vec::with_capacity(spec.groups);
            for _ in 0..spec.groups {
                let g = Matrix::from_vec(m, m, rng.normals(m * m))?;
                let norm = operator_norm(&g)?;
                maps.push(g.scale(1.0 / norm));
            }
            Law::Modular(maps)
        }
        TaskKind::FactorizedManifold => {
            let m = d / spec.groups;
            let lat = m / 2;
            let std = math::sqrt(1.0 / lat as f64);
            let maps = (0..spec.groups)
                .map(|_| Matrix::from_vec(m, lat, rng.normals(m * lat)).map(|a| a.scale(std)))
                .collect::<Result<Vec<_>>>()?;
            Law::Manifold(maps)
        }
    };
    let scramble = if spec.scramble { rng.permutation(d) } else { PermutationVec::identity(d) };
    let mut task = SyntheticTask {
        spec: spec.clone(),
        law,
        scramble,
        val: (Matrix::zeros(0, 0), Matrix::zeros(0, 0)),
        pool: None,
    };
    task.val = task.sample(&mut SeededRng::with_stream(spec.seed, 1), spec.val_n)?;
    if spec.train_n > 0 {
        task.pool = Some(task.sample(&mut SeededRng::with_stream(spec.seed, 2), spec.train_n)?);
    }
    Ok(task)
}

impl SyntheticTask {
    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    /// `n` samples from the analysis stream, disjoint from training and
    /// validation draws.
    pub fn analysis_sample(&self, n: usize) -> Result<(Matrix, Matrix)> {
        self.sample(&mut SeededRng::with_stream(self.spec.seed, ANALYSIS_STREAM), n)
    }

    /// `n` fresh samples `(x, y)`, one per row.
    pub fn sample(&self, rng: &mut SeededRng, n: usize) -> Result<(Matrix, Matrix)> {
        let d = self.spec.dim;
        let sigma = self.spec.noise_sigma;
        let mut x = Matrix::zeros(n, d);
        let mut y = Matrix::zeros(n, d);
        for i in 0..n {
            match &self.law {
                Law::Orthogonal(q) => {
                    let xi = rng.normals(d);
                    let yi = q.matvec(&xi)?;
                    x.row_mut(i).copy_from_slice(&xi);
                    y.row_mut(i).copy_from_slice(&yi);
                }
                Law::Modular(maps) => {
                    let rho = self.spec.correlation;
                    let (a, b) = (math::sqrt(rho), math::sqrt(1.0 - rho));
                    let m = d / maps.len();
                    for (g, mg) in maps.iter().enumerate() {
                        let s = rng.normal();
                        let xg: Vec<f64> = (0..m).map(|_| a * s + b * rng.normal()).collect();
                        let yg = mg.matvec(&xg)?;
                        x.row_mut(i)[g * m..(g + 1) * m].copy_from_slice(&xg);
                        y.row_mut(i)[g * m..(g + 1) * m].copy_from_slice(&yg);
                    }
                }
                Law::Manifold(maps) => {
                    let m = d / maps.len();
                    for (g, ag) in maps.iter().enumerate() {
                        let z = rng.normals(ag.cols());
                        let xg = ag.matvec(&z)?;
                        x.row_mut(i)[g * m..(g + 1) * m].copy_from_slice(&xg);
                    }
                }
            }
            for v in y.row_mut(i) {
                *v += sigma * rng.normal();
            }
            if matches!(self.law, Law::Manifold(_)) {
                for v in x.row_mut(i) {
                    *v += sigma * rng.normal();
                }
                let xi = x.row(i).to_vec();
                y.row_mut(i).copy_from_slice(&xi);
            }
        }
        if self.spec.scramble {
            x = x.select_cols(self.scramble.mapping());
            y = y.select_cols(self.scramble.mapping());
        }
        Ok((x, y))
    }

    /// Group of each observed feature, for the grouped tasks.
    pub fn ground_truth_partition(&self) -> Option<BlockPartition> {
        let groups = match &self.law {
            Law::Orthogonal(_) => return None,
            Law::Modular(m) | Law::Manifold(m) => m.len(),
        };
        let m = self.spec.dim / groups;
        let assignment = self.scramble.mapping().iter().map(|&orig| orig / m).collect();
        BlockPartition::new(assignment, groups).ok()
    }

    /// The hidden feature permutation (identity without scrambling).
    pub fn scramble(&self) -> &PermutationVec {
        &self.scramble
    }

    /// The orthogonal map of a high-rank recovery task.
    pub fn orthogonal_map(&self) -> Option<&Matrix> {
        match &self.law {
            Law::Orthogonal(q) => Some(q),
            _ => None,
        }
    }

    /// Human-readable generator law for provenance records.
    pub fn law(&self) -> String {
        let s = &self.spec;
        let body = match s.kind {
            TaskKind::HighrankRecovery => format!("x ~ N(0, I_{0}); y = Q x + {1} e; Q Haar-orthogonal {0}x{0}", s.dim, s.noise_sigma),
            TaskKind::ExtremeModular => format!(
                "{} groups of {}; x_i = sqrt({2}) s_g + sqrt(1 - {2}) w_i; y_g = M_g x_g + {3} e; M_g Gaussian with unit spectral norm",
                s.groups,
                s.dim / s.groups,
                s.correlation,
                s.noise_sigma
            ),
            TaskKind::FactorizedManifold => format!(
                "{} groups of {}; x_g = A_g z_g + {} e, z_g ~ N(0, I_{}), A_g ~ N(0, 1/latent); y = x",
                s.groups,
                s.dim / s.groups,
                s.noise_sigma,
                s.dim / s.groups / 2
            ),
        };
        if s.scramble {
            format!("{body}; features scrambled by a fixed random permutation")
        } else {
            body
        }
    }
}

impl Task for SyntheticTask {
    fn in_dim(&self) -> usize {
        self.spec.dim
    }

    fn out_dim(&self) -> usize {
        self.spec.dim
    }

    fn train_batch(&self, step: u64, batch: usize) -> Result<(Matrix, Matrix)> {
        let mut rng = SeededRng::with_stream(self.spec.seed, BATCH_STREAM_BASE + step);
        match &self.pool {
            None => self.sample(&mut rng, batch),
            Some((px, py)) => {
                let rows: Vec<usize> = (0..batch).map(|_| rng.below(px.rows())).collect();
                let pick = |m: &Matrix| Matrix::from_fn(batch, m.cols(), |i, j| m[(rows[i], j)]);
                Ok((pick(px), pick(py)))
            }
        }
    }

    fn validation(&self) -> (&Matrix, &Matrix) {
        (&self.val.0, &self.val.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JointKind {
    /// Product of two random marginals.
    Independent,
    /// With probability `strength`, `y = x mod card_y`; otherwise a product
    /// draw.
    Coupled { strength: f64 },
}

fn random_marginal(card: usize, rng: &mut SeededRng) -> Vec<f64> {
    let w: Vec<f64> = (0..card).map(|_| 0.1 + rng.uniform()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn draw(p: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// `n` seeded draws from a joint distribution over `card_x x card_y`.
pub fn gen_joint(kind: JointKind, card_x: usize, card_y: usize, n: usize, seed: u64) -> Result<JointHistogram> {
    if card_x == 0 || card_y == 0 {
        return Err(Error::invalid("cardinalities must be positive"));
    }
    let mut rng = SeededRng::new(seed);
    let px = random_marginal(card_x, &mut rng);
    let py = random_marginal(card_y, &mut rng);
    let strength = match kind {
        JointKind::Independent => 0.0,
        JointKind::Coupled { strength } if (0.0..=1.0).contains(&strength) => strength,
        JointKind::Coupled { .. } => return Err(Error::invalid("coupling strength must lie in [0, 1]")),
    };
    let mut h = JointHistogram::new(card_x, card_y);
    for _ in 0..n {
        let x = draw(&px, &mut rng);
        let y = if rng.uniform() < strength { x % card_y } else { draw(&py, &mut rng) };
        h.add(x, y)?;
    }
    Ok(h)
}

/// A random two-handed piece of `notes` notes. Notes in the first
/// `lh_prefix` share of the piece are all left-hand; later notes pick a
/// hand uniformly. Onsets advance by 0, 120, 240 or 480 ticks.
pub fn random_piece(notes: usize, lh_prefix: f64, seed: u64) -> Result<Piece> {
    if !(0.0..=1.0).contains(&lh_prefix) {
        return Err(Error::invalid("lh_prefix must lie in [0, 1]"));
    }
    let mut rng = SeededRng::new(seed);
    let prefix = (lh_prefix * notes as f64) as usize;
    let mut onset = 0u64;
    let mut sounding: Vec<(Hand, u8, u64)> = Vec::new();
    let mut events = Vec::with_capacity(notes);
    for i in 0..notes {
        onset += [0, 120, 240, 480][rng.below(4)];
        let hand = if i < prefix || rng.below(2) == 1 { Hand::Lh } else { Hand::Rh };
        let (lo, hi) = match hand {
            Hand::Lh => (PITCH_MIN, 64),
            Hand::Rh => (55, PITCH_MAX),
        };
        sounding.retain(|&(_, _, end)| end > onset);
        let pitch = loop {
            let p = lo + rng.below(usize::from(hi - lo) + 1) as u8;
            if !sounding.iter().any(|&(h, q, _)| h == hand && q == p) {
                break p;
            }
        };
        let duration = [60, 120, 240, 480, 960][rng.below(5)];
        sounding.push((hand, pitch, onset + duration));
        events.push(NoteEvent { onset, duration, pitch, hand });
    }
    Piece::new(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::{mutual_information, nmi};

    #[test]
    fn same_spec_same_data() {
        let spec = TaskSpec::new(TaskKind::ExtremeModular, 16, 4, 3);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.validation().0, b.validation().0);
        assert_eq!(a.train_batch(7, 5).unwrap(), b.train_batch(7, 5).unwrap());
        assert_ne!(a.train_batch(7, 5).unwrap().0, a.train_batch(8, 5).unwrap().0);
    }

    #[test]
    fn highrank_is_orthogonal() {
        let t = generate(&TaskSpec::new(TaskKind::HighrankRecovery, 6, 1, 1)).unwrap();
        let q = t.orthogonal_map().unwrap();
        assert!(q.matmul_tn(q).unwrap().max_abs_diff(&Matrix::identity(6)) < 1e-12);
    }

    #[test]
    fn scramble_tracks_groups() {
        let mut spec = TaskSpec::new(TaskKind::ExtremeModular, 12, 3, 5);
        spec.scramble = true;
        let t = generate(&spec).unwrap();
        let p = t.ground_truth_partition().unwrap();
        assert_eq!(p.block_sizes(), &[4, 4, 4]);
        // The identity-ordered partition would be contiguous.
        assert_ne!(p, BlockPartition::contiguous(12, 3).unwrap());
    }

    #[test]
    fn manifold_target_is_input() {
        let t = generate(&TaskSpec::new(TaskKind::FactorizedManifold, 8, 2, 2)).unwrap();
        let (x, y) = t.validation();
        assert_eq!(x, y);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&TaskSpec::new(TaskKind::ExtremeModular, 10, 3, 0)).is_err());
        let mut s = TaskSpec::new(TaskKind::HighrankRecovery, 4, 1, 0);
        s.noise_sigma = -1.0;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn joints() {
        let ind = gen_joint(JointKind::Independent, 4, 4, 20_000, 1).unwrap();
        assert!(mutual_information(&ind).unwrap() < 0.01);
        let full = gen_joint(JointKind::Coupled { strength: 1.0 }, 4, 4, 5_000, 1).unwrap();
        assert!((nmi(&full).unwrap().value - 1.0).abs() < 1e-12);
    }
}
