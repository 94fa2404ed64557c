//! Block partitions of feature indices and the permutation schedules that
//! move features between blocks from layer to layer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dense::{Matrix, PermutationVec};
use crate::info::NmiMatrix;
use crate::spectral::effrank_entropy;
use crate::{Error, Result, SeededRng};

/// Assignment of `dim` feature indices to `k` non-empty blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct BlockPartition {
    k: usize,
    assignment: Vec<usize>,
    block_sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    dim: usize,
    k: usize,
    assignment: Vec<usize>,
}

impl TryFrom<PartitionRepr> for BlockPartition {
    type Error = Error;

    fn try_from(r: PartitionRepr) -> Result<Self> {
        if r.dim != r.assignment.len() {
            return Err(Error::shape("partition dim differs from its assignment length"));
        }
        Self::new(r.assignment, r.k)
    }
}

impl From<BlockPartition> for PartitionRepr {
    fn from(p: BlockPartition) -> Self {
        Self { dim: p.assignment.len(), k: p.k, assignment: p.assignment }
    }
}

impl BlockPartition {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 || k > assignment.len() {
            return Err(Error::invalid(format!("cannot split {} features into {k} blocks", assignment.len())));
        }
        let mut block_sizes = vec![0; k];
        for &b in &assignment {
            if b >= k {
                return Err(Error::invalid(format!("block label {b} out of range for k = {k}")));
            }
            block_sizes[b] += 1;
        }
        if block_sizes.contains(&0) {
            return Err(Error::invalid("every block must be non-empty"));
        }
        Ok(Self { k, assignment, block_sizes })
    }

    /// Relabels blocks in order of their smallest member.
    pub fn canonical(assignment: &[usize]) -> Result<Self> {
        let mut relabel: Vec<Option<usize>> = Vec::new();
        let mut next = 0;
        let mut out = Vec::with_capacity(assignment.len());
        for &b in assignment {
            if b >= relabel.len() {
                relabel.resize(b + 1, None);
            }
            let l = *relabel[b].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            out.push(l);
        }
        Self::new(out, next)
    }

    /// Consecutive index ranges; the first `dim % k` blocks take one extra.
    pub fn contiguous(dim: usize, k: usize) -> Result<Self> {
        if k == 0 || k > dim {
            return Err(Error::invalid(format!("cannot split {dim} features into {k} blocks")));
        }
        let sizes = balanced_sizes(dim, k);
        let assignment = sizes.iter().enumerate().flat_map(|(b, &s)| core::iter::repeat_n(b, s)).collect();
        Self::new(assignment, k)
    }

    pub fn dim(&self) -> usize {
        self.assignment.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn is_equal_sized(&self) -> bool {
        self.block_sizes.iter().all(|&s| s == self.block_sizes[0])
    }

    /// Members of block `b` in increasing index order.
    pub fn members(&self, b: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.assignment[i] == b).collect()
    }

    pub fn all_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &b) in self.assignment.iter().enumerate() {
            out[b].push(i);
        }
        out
    }
}

fn balanced_sizes(dim: usize, k: usize) -> Vec<usize> {
    (0..k).map(|b| dim / k + usize::from(b < dim % k)).collect()
}

/// Uniformly random partition with block sizes as equal as possible.
pub fn partition_random(dim: usize, k: usize, rng: &mut SeededRng) -> Result<BlockPartition> {
    if k == 0 || k > dim {
        return Err(Error::invalid(format!("cannot split {dim} features into {k} blocks")));
    }
    let order = rng.permutation(dim);
    let mut assignment = vec![0; dim];
    let mut pos = 0;
    for (b, s) in balanced_sizes(dim, k).into_iter().enumerate() {
        for &i in &order.mapping()[pos..pos + s] {
            assignment[i] = b;
        }
        pos += s;
    }
    BlockPartition::new(assignment, k)
}

/// Agglomerative clustering with the Ward update on the dissimilarity
/// `1 - NMI`, stopped at `k` clusters. Ties pick the pair with the smallest
/// indices. Block labels follow the smallest member.
pub fn partition_nmi_ward(c: &NmiMatrix, k: usize) -> Result<BlockPartition> {
    let n = c.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot split {n} features into {k} blocks")));
    }
    let mut dist: Vec<f64> = c.values().iter().map(|v| 1.0 - v).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut label: Vec<usize> = (0..n).collect();
    for _ in 0..n - k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && dist[i * n + j] < best.0 {
                    best = (dist[i * n + j], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for m in 0..n {
            if !active[m] || m == i || m == j {
                continue;
            }
            let nm = size[m] as f64;
            let d = ((ni + nm) * dist[i * n + m] + (nj + nm) * dist[j * n + m] - nm * dij) / (ni + nj + nm);
            dist[i * n + m] = d;
            dist[m * n + i] = d;
        }
        size[i] += size[j];
        active[j] = false;
        for l in &mut label {
            if *l == j {
                *l = i;
            }
        }
    }
    BlockPartition::canonical(&label)
}

/// Moves features out of oversized blocks until every block holds
/// `dim / k` features. The evicted feature is the one with the weakest mean
/// NMI to the rest of its block; it joins the undersized block it is most
/// strongly tied to.
pub fn rebalance_equal(p: &BlockPartition, c: &NmiMatrix) -> Result<BlockPartition> {
    let (dim, k) = (p.dim(), p.k());
    if c.dim() != dim {
        return Err(Error::shape("NMI table and partition differ in dimension"));
    }
    if dim % k != 0 {
        return Err(Error::UnequalBlocks);
    }
    let target = dim / k;
    let mut members = p.all_members();
    let mean_to = |i: usize, set: &[usize]| -> f64 {
        let others: Vec<usize> = set.iter().copied().filter(|&j| j != i).collect();
        if others.is_empty() {
            return 0.0;
        }
        others.iter().map(|&j| c.get(i, j)).sum::<f64>() / others.len() as f64
    };
    while let Some(over) = (0..k).find(|&b| members[b].len() > target) {
        let set = members[over].clone();
        let evict = *set
            .iter()
            .min_by(|&&a, &&b| mean_to(a, &set).total_cmp(&mean_to(b, &set)).then(a.cmp(&b)))
            .expect("oversized block is non-empty");
        let dest = (0..k)
            .filter(|&b| members[b].len() < target)
            .max_by(|&a, &b| mean_to(evict, &members[a]).total_cmp(&mean_to(evict, &members[b])).then(b.cmp(&a)))
            .expect("an undersized block exists while one is oversized");
        members[over].retain(|&i| i != evict);
        members[dest].push(evict);
    }
    let mut assignment = vec![0; dim];
    for (b, set) in members.iter().enumerate() {
        for &i in set {
            assignment[i] = b;
        }
    }
    BlockPartition::new(assignment, k)
}

/// Connected components of the graph joining features with NMI `>= eps`.
pub fn partition_quotient(c: &NmiMatrix, eps: f64) -> Result<BlockPartition> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("quotient threshold {eps} outside (0, 1]")));
    }
    let n = c.dim();
    if n == 0 {
        return Err(Error::EmptyInput("empty NMI table"));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if c.get(i, j) >= eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    BlockPartition::canonical(&roots)
}

/// Sum of NMI over unordered feature pairs that straddle two blocks.
pub fn topological_regret(p: &BlockPartition, c: &NmiMatrix) -> Result<f64> {
    let n = p.dim();
    if c.dim() != n {
        return Err(Error::shape("NMI table and partition differ in dimension"));
    }
    let mut r = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if p.block_of(i) != p.block_of(j) {
                r += c.get(i, j);
            }
        }
    }
    Ok(r)
}

/// Permutation that carries the contents of block `b` into the positions of
/// block `(b + layer) mod k`, keeping the order within each block. Applying
/// the result `k` times is the identity.
pub fn cyclic_shift(p: &BlockPartition, layer: usize) -> Result<PermutationVec> {
    if !p.is_equal_sized() {
        return Err(Error::UnequalBlocks);
    }
    let k = p.k();
    let members = p.all_members();
    let shift = layer % k;
    let mut mapping = vec![0; p.dim()];
    for b in 0..k {
        let dest = &members[(b + shift) % k];
        for (r, &src) in members[b].iter().enumerate() {
            mapping[dest[r]] = src;
        }
    }
    PermutationVec::new(mapping)
}

/// Per-layer input permutations for a stack of block-diagonal layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShuffleSchedule {
    /// No permutation at any layer.
    None,
    /// Layer `l` draws a uniform permutation from stream `l` of `seed`.
    Random {
        seed: u64,
    },
    /// Identity at layer 0, then a one-block cyclic shift at every later layer.
    Cyclic,
    Fixed {
        permutations: Vec<PermutationVec>,
    },
}

impl ShuffleSchedule {
    pub fn permutation(&self, layer: usize, p: &BlockPartition) -> Result<PermutationVec> {
        let dim = p.dim();
        match self {
            Self::None => Ok(PermutationVec::identity(dim)),
            Self::Random { seed } => Ok(SeededRng::with_stream(*seed, layer as u64).permutation(dim)),
            Self::Cyclic if layer == 0 => Ok(PermutationVec::identity(dim)),
            Self::Cyclic => cyclic_shift(p, 1),
            Self::Fixed { permutations } => {
                let perm = permutations
                    .get(layer)
                    .ok_or_else(|| Error::invalid(format!("no permutation for layer {layer}")))?;
                if perm.len() != dim {
                    return Err(Error::shape("fixed permutation length differs from partition dimension"));
                }
                Ok(perm.clone())
            }
        }
    }
}

/// Effective rank of each block's centered data columns.
pub fn block_effranks(data: &Matrix, p: &BlockPartition) -> Result<Vec<f64>> {
    if data.cols() != p.dim() {
        return Err(Error::shape("data columns differ from partition dimension"));
    }
    p.all_members()
        .iter()
        .map(|cols| {
            let mut sub = data.select_cols(cols);
            let n = sub.rows() as f64;
            for j in 0..sub.cols() {
                let mean = (0..sub.rows()).map(|i| sub[(i, j)]).sum::<f64>() / n;
                for i in 0..sub.rows() {
                    sub[(i, j)] -= mean;
                }
            }
            match effrank_entropy(&crate::dense::svd_values(&sub)?) {
                Err(Error::DegenerateSpectrum) => Ok(0.0),
                r => r,
            }
        })
        .collect()
}

/// Outcome of the block capacity check. Advisory only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleThresholdReport {
    /// Whether a one-block cyclic schedule reaches every block within `k - 1`
    /// layers for this partition.
    pub mixing_ok: bool,
    /// Blocks with `size < gamma * effrank`, as `(block, size, required)`.
    pub capacity_violations: Vec<(usize, usize, f64)>,
    pub warnings: Vec<String>,
}

/// Checks that each block is wide enough for the effective rank of the data
/// it receives (`size >= gamma * effrank`), and that the shift schedule
/// can mix information across all blocks.
pub fn scale_threshold_check(p: &BlockPartition, per_block_effrank: &[f64], gamma: f64) -> ScaleThresholdReport {
    let mut warnings = Vec::new();
    let mut capacity_violations = Vec::new();
    if gamma < 1.0 {
        warnings.push(format!("gamma = {gamma} is below 1"));
    }
    if per_block_effrank.len() != p.k() {
        warnings.push(format!("{} effective ranks given for {} blocks", per_block_effrank.len(), p.k()));
    }
    for (b, (&size, &r)) in p.block_sizes().iter().zip(per_block_effrank).enumerate() {
        let required = gamma * r;
        if (size as f64) < required {
            capacity_violations.push((b, size, required));
            warnings.push(format!("block {b} holds {size} features but needs {required:.2}"));
        }
    }
    let mixing_ok = p.is_equal_sized();
    if !mixing_ok {
        warnings.push(String::from("unequal block sizes: cyclic shifts are unavailable"));
    }
    ScaleThresholdReport { mixing_ok, capacity_violations, warnings }
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("labelings differ in length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("adjusted Rand index needs at least 2 items"));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = (0..ka).map(|x| c2((0..kb).map(|y| table[x * kb + y]).sum())).sum();
    let cols: f64 = (0..kb).map(|y| c2((0..ka).map(|x| table[x * kb + y]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_nmi(groups: &[usize], within: f64, across: f64) -> NmiMatrix {
        let n = groups.len();
        let v = (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                if i == j {
                    1.0
                } else if groups[i] == groups[j] {
                    within
                } else {
                    across
                }
            })
            .collect();
        NmiMatrix::from_values(n, v).unwrap()
    }

    #[test]
    fn contiguous_sizes() {
        let p = BlockPartition::contiguous(10, 3).unwrap();
        assert_eq!(p.block_sizes(), &[4, 3, 3]);
        assert_eq!(p.members(1), vec![4, 5, 6]);
        assert!(BlockPartition::contiguous(3, 4).is_err());
        assert!(BlockPartition::new(vec![0, 0, 2], 3).is_err());
    }

    #[test]
    fn random_partition_sizes() {
        let p = partition_random(10, 3, &mut SeededRng::new(5)).unwrap();
        let mut sizes = p.block_sizes().to_vec();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert!(partition_random(2, 3, &mut SeededRng::new(5)).is_err());
    }

    #[test]
    fn ward_recovers_blocks() {
        let groups = [0, 1, 0, 2, 1, 2, 0, 1, 2];
        let c = block_nmi(&groups, 0.9, 0.05);
        let p = partition_nmi_ward(&c, 3).unwrap();
        assert_eq!(adjusted_rand_index(p.assignment(), &groups).unwrap(), 1.0);
        let one = partition_nmi_ward(&c, 1).unwrap();
        assert_eq!(one.k(), 1);
        let all = partition_nmi_ward(&c, 9).unwrap();
        assert_eq!(all.assignment(), &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(partition_nmi_ward(&c, 10).is_err());
    }

    #[test]
    fn quotient_components() {
        let groups = [0, 0, 1, 1, 2];
        let c = block_nmi(&groups, 0.8, 0.1);
        assert_eq!(partition_quotient(&c, 0.5).unwrap().assignment(), &[0, 0, 1, 1, 2]);
        assert_eq!(partition_quotient(&c, 1.0).unwrap().k(), 5);
        assert!(partition_quotient(&c, 0.0).is_err());
    }

    #[test]
    fn regret_counts_cross_pairs() {
        let c = block_nmi(&[0, 0, 1, 1], 0.5, 0.25);
        let p = BlockPartition::contiguous(4, 2).unwrap();
        assert_eq!(topological_regret(&p, &c).unwrap(), 4.0 * 0.25);
        let trivial = BlockPartition::contiguous(4, 1).unwrap();
        assert_eq!(topological_regret(&trivial, &c).unwrap(), 0.0);
    }

    #[test]
    fn cyclic_shift_moves_blocks() {
        let p = BlockPartition::contiguous(6, 3).unwrap();
        let s = cyclic_shift(&p, 1).unwrap();
        // Block 0 content lands in block 1 positions.
        let x = [10, 11, 20, 21, 30, 31];
        assert_eq!(s.apply(&x).unwrap(), vec![30, 31, 10, 11, 20, 21]);
        let mut acc = PermutationVec::identity(6);
        for _ in 0..3 {
            acc = acc.then(&s).unwrap();
        }
        assert!(acc.is_identity());
        assert!(cyclic_shift(&p, 3).unwrap().is_identity());
        let uneven = BlockPartition::contiguous(7, 3).unwrap();
        assert_eq!(cyclic_shift(&uneven, 1), Err(Error::UnequalBlocks));
    }

    #[test]
    fn rebalance_restores_equal_sizes() {
        let c = block_nmi(&[0, 0, 0, 1, 1, 1], 0.9, 0.1);
        let p = BlockPartition::new(vec![0, 0, 0, 0, 1, 1], 2).unwrap();
        let q = rebalance_equal(&p, &c).unwrap();
        assert_eq!(q.assignment(), &[0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let r = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((r - -0.5).abs() < 1e-12);
    }

    #[test]
    fn schedules() {
        let p = BlockPartition::contiguous(8, 4).unwrap();
        assert!(ShuffleSchedule::None.permutation(3, &p).unwrap().is_identity());
        assert!(ShuffleSchedule::Cyclic.permutation(0, &p).unwrap().is_identity());
        assert_eq!(ShuffleSchedule::Cyclic.permutation(2, &p).unwrap(), cyclic_shift(&p, 1).unwrap());
        let r = ShuffleSchedule::Random { seed: 3 };
        assert_eq!(r.permutation(1, &p).unwrap(), r.permutation(1, &p).unwrap());
        assert_ne!(r.permutation(1, &p).unwrap(), r.permutation(2, &p).unwrap());
    }

    #[test]
    fn capacity_check() {
        let p = BlockPartition::contiguous(8, 2).unwrap();
        let r = scale_threshold_check(&p, &[2.0, 5.0], 1.0);
        assert_eq!(r.capacity_violations, vec![(1, 4, 5.0)]);
        assert!(r.mixing_ok);
    }
}
