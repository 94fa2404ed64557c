//! Dense and block-diagonal layer stacks with input permutations.
//!
//! Layer `l` computes, for an input row `x`:
//!
//! 1. `h = P_l x` (a gather; identity when the layer has no shuffle),
//! 2. `z = W_l h`, where a block-diagonal `W_l` maps the positions of block
//!    `b` of its partition onto the same positions,
//! 3. optional layer normalization, optional ReLU,
//! 4. with a residual connection, the output is `h + act(norm(z))`.
//!
//! With `restore_order` set, the inverse of the composed shuffles is applied
//! to the final output so that output coordinate `i` refers to input feature
//! `i`. There are no bias vectors; the layer-norm offset is the only additive
//! parameter.

mod analysis;
mod embedding;
mod forward;

pub use analysis::{end_to_end_linear_map, fault_localize, jacobian_at, FaultReport};
pub use embedding::{
    embed, embed_backward, embedding_comparison, init_embedding, EmbeddingComparison, EmbeddingMode, EmbeddingSpec,
    EmbeddingTables,
};
pub use forward::{backward, forward, forward_cached, ForwardCache, NetworkGrads};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dense::{Matrix, PermutationVec};
use crate::math;
use crate::topology::{BlockPartition, ShuffleSchedule};
use crate::{Error, Result, SeededRng};

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    /// Square blocks, one per block of the partition.
    BlockDiagonal {
        partition: BlockPartition,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Gather applied to the layer input; length `in_dim`.
    pub shuffle: Option<PermutationVec>,
    pub activation: Activation,
    pub residual: bool,
    pub layernorm: bool,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        Self::plain(LayerKind::Dense { in_dim, out_dim })
    }

    pub fn block(partition: BlockPartition) -> Self {
        Self::plain(LayerKind::BlockDiagonal { partition })
    }

    fn plain(kind: LayerKind) -> Self {
        Self { kind, shuffle: None, activation: Activation::None, residual: false, layernorm: false }
    }

    pub fn with_shuffle(mut self, p: PermutationVec) -> Self {
        self.shuffle = if p.is_identity() { None } else { Some(p) };
        self
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn with_residual(mut self, on: bool) -> Self {
        self.residual = on;
        self
    }

    pub fn with_layernorm(mut self, on: bool) -> Self {
        self.layernorm = on;
        self
    }

    pub fn in_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Dense { in_dim, .. } => *in_dim,
            LayerKind::BlockDiagonal { partition } => partition.dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Dense { out_dim, .. } => *out_dim,
            LayerKind::BlockDiagonal { partition } => partition.dim(),
        }
    }

    /// Weight entries plus layer-norm gain and offset.
    pub fn param_count(&self) -> usize {
        let w = match &self.kind {
            LayerKind::Dense { in_dim, out_dim } => in_dim * out_dim,
            LayerKind::BlockDiagonal { partition } => partition.block_sizes().iter().map(|s| s * s).sum(),
        };
        w + if self.layernorm { 2 * self.out_dim() } else { 0 }
    }

    /// `(rows, cols)` of each weight matrix.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        match &self.kind {
            LayerKind::Dense { in_dim, out_dim } => vec![(*out_dim, *in_dim)],
            LayerKind::BlockDiagonal { partition } => partition.block_sizes().iter().map(|&s| (s, s)).collect(),
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("layer {index}: {msg}")));
        match &self.kind {
            LayerKind::Dense { in_dim, out_dim } if *in_dim == 0 || *out_dim == 0 => {
                return bad("zero-sized dense layer");
            }
            LayerKind::BlockDiagonal { partition } if !partition.is_equal_sized() => {
                return Err(Error::UnequalBlocks);
            }
            _ => {}
        }
        if let Some(p) = &self.shuffle {
            if p.len() != self.in_dim() {
                return bad("shuffle length differs from the input dimension");
            }
        }
        if self.residual && self.in_dim() != self.out_dim() {
            return bad("residual connection needs equal input and output dimensions");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub restore_order: bool,
}

/// Options shared by every layer of a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackOptions {
    pub activation: Activation,
    pub residual: bool,
    pub layernorm: bool,
}

impl Default for StackOptions {
    fn default() -> Self {
        Self { activation: Activation::None, residual: false, layernorm: false }
    }
}

impl StackOptions {
    fn apply(&self, l: LayerSpec) -> LayerSpec {
        l.with_activation(self.activation).with_residual(self.residual).with_layernorm(self.layernorm)
    }
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, restore_order: bool) -> Result<Self> {
        let s = Self { layers, restore_order };
        s.validate()?;
        Ok(s)
    }

    /// `depth` square dense layers.
    pub fn dense_stack(dim: usize, depth: usize, opts: StackOptions) -> Result<Self> {
        Self::new((0..depth).map(|_| opts.apply(LayerSpec::dense(dim, dim))).collect(), false)
    }

    /// `depth` block-diagonal layers over `partition`, layer `l` gathering its
    /// input with `schedule.permutation(l, partition)`.
    pub fn block_stack(
        partition: &BlockPartition,
        depth: usize,
        schedule: &ShuffleSchedule,
        opts: StackOptions,
        restore_order: bool,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|l| {
                Ok(opts.apply(LayerSpec::block(partition.clone()).with_shuffle(schedule.permutation(l, partition)?)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, restore_order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::EmptyInput("network has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate(i)?;
            if i > 0 && self.layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::shape(format!("layer {i} input does not match layer {} output", i - 1)));
            }
        }
        if self.restore_order && self.layers.iter().any(|l| l.in_dim() != l.out_dim()) {
            return Err(Error::invalid("restore_order needs every layer to be square"));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Feature held at each position after all shuffles, as a gather mapping.
    pub fn composed_shuffle(&self) -> Option<PermutationVec> {
        let mut acc = PermutationVec::identity(self.in_dim());
        for l in &self.layers {
            if let Some(p) = &l.shuffle {
                acc = acc.then(p).ok()?;
            }
        }
        Some(acc)
    }

    /// The final gather applied when `restore_order` is set.
    pub fn restore_permutation(&self) -> Option<PermutationVec> {
        if !self.restore_order {
            return None;
        }
        self.composed_shuffle().map(|p| p.inverse()).filter(|p| !p.is_identity())
    }

    /// Structural hash used to match caches to specs.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the structural fields.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(self.layers.len() as u64);
        feed(u64::from(self.restore_order));
        for l in &self.layers {
            feed(l.in_dim() as u64);
            feed(l.out_dim() as u64);
            feed(u64::from(l.residual) | u64::from(l.layernorm) << 1 | (l.activation as u64) << 2);
            if let LayerKind::BlockDiagonal { partition } = &l.kind {
                partition.assignment().iter().for_each(|&a| feed(a as u64));
            }
            if let Some(p) = &l.shuffle {
                p.mapping().iter().for_each(|&a| feed(a as u64));
            }
        }
        h
    }
}

/// Weights of one layer. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// One matrix for a dense layer, one per block otherwise.
    pub weights: Vec<Matrix>,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_like(spec: &LayerSpec) -> Self {
        let n = if spec.layernorm { spec.out_dim() } else { 0 };
        Self {
            weights: spec.weight_shapes().into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect(),
            ln_gain: vec![0.0; n],
            ln_bias: vec![0.0; n],
        }
    }
}

/// Flat views over a set of parameter tensors, in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Layer (or table) id owning each tensor, parallel to `tensors`.
    fn tensor_owners(&self) -> Vec<usize>;
}

fn layer_tensors(layers: &[LayerParams]) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter().map(Matrix::as_slice));
        out.push(&l.ln_gain[..]);
        out.push(&l.ln_bias[..]);
    }
    out
}

fn layer_tensors_mut(layers: &mut [LayerParams]) -> Vec<&mut [f64]> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter_mut().map(Matrix::as_mut_slice));
        out.push(&mut l.ln_gain[..]);
        out.push(&mut l.ln_bias[..]);
    }
    out
}

fn layer_owners(layers: &[LayerParams]) -> Vec<usize> {
    layers.iter().enumerate().flat_map(|(i, l)| core::iter::repeat_n(i, l.weights.len() + 2)).collect()
}

/// Parameters of a network. Every mutable access bumps a version counter so
/// that caches recorded before an update are rejected by [`backward`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    layers: Vec<LayerParams>,
    #[serde(skip)]
    version: u64,
}

impl NetworkState {
    /// He initialization: weights drawn from `N(0, 2 / fan_in)` with fan-in
    /// the block width (or layer input width); layer-norm gain 1, offset 0.
    pub fn init_he(spec: &NetworkSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let mut p = LayerParams::zeros_like(l);
                for w in &mut p.weights {
                    let std = math::sqrt(2.0 / w.cols() as f64);
                    w.as_mut_slice().iter_mut().for_each(|v| *v = std * rng.normal());
                }
                p.ln_gain.iter_mut().for_each(|g| *g = 1.0);
                p
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    /// Checks shapes against `spec`.
    pub fn from_layers(spec: &NetworkSpec, layers: Vec<LayerParams>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layers.len() {
            return Err(Error::shape("layer count differs from spec"));
        }
        for (i, (p, l)) in layers.iter().zip(&spec.layers).enumerate() {
            let shapes: Vec<_> = p.weights.iter().map(Matrix::shape).collect();
            let n = if l.layernorm { l.out_dim() } else { 0 };
            if shapes != l.weight_shapes() || p.ln_gain.len() != n || p.ln_bias.len() != n {
                return Err(Error::shape(format!("layer {i} parameters do not match spec")));
            }
            if p.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite("weights"));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(Matrix::is_finite) && l.ln_gain.iter().chain(&l.ln_bias).all(|v| v.is_finite())
        })
    }
}

impl ParamSet for NetworkState {
    fn tensors(&self) -> Vec<&[f64]> {
        layer_tensors(&self.layers)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        layer_tensors_mut(&mut self.layers)
    }

    fn tensor_owners(&self) -> Vec<usize> {
        layer_owners(&self.layers)
    }
}

impl ParamSet for NetworkGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        layer_tensors(&self.layers)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        layer_tensors_mut(&mut self.layers)
    }

    fn tensor_owners(&self) -> Vec<usize> {
        layer_owners(&self.layers)
    }
}
