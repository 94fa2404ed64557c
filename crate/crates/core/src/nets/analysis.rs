//! Input-output Jacobians and fault localization.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::forward::{forward_cached, relu_active, ForwardCache};
use super::{Activation, LayerKind, LayerSpec, NetworkSpec, NetworkState};
use crate::dense::{orthonormal_basis, Matrix};
use crate::math;
use crate::topology::BlockPartition;
use crate::{Error, Result};

/// Jacobian of the linear part `z = W P x` of a layer, as an `out x in` matrix.
fn linear_jacobian(spec: &LayerSpec, weights: &[Matrix]) -> Matrix {
    let (n_out, n_in) = (spec.out_dim(), spec.in_dim());
    let gather: Vec<usize> = match &spec.shuffle {
        Some(p) => p.mapping().to_vec(),
        None => (0..n_in).collect(),
    };
    let mut a = Matrix::zeros(n_out, n_in);
    match &spec.kind {
        LayerKind::Dense { .. } => {
            let w = &weights[0];
            for i in 0..n_out {
                for k in 0..n_in {
                    a[(i, gather[k])] = w[(i, k)];
                }
            }
        }
        LayerKind::BlockDiagonal { partition } => {
            for (w, cols) in weights.iter().zip(partition.all_members()) {
                for (r, &i) in cols.iter().enumerate() {
                    for (c, &k) in cols.iter().enumerate() {
                        a[(i, gather[k])] = w[(r, c)];
                    }
                }
            }
        }
    }
    a
}

/// `d act(norm(z)) / dz` for sample 0 of the cache.
fn post_linear_jacobian(spec: &LayerSpec, gain: &[f64], cache: &ForwardCache, l: usize) -> Matrix {
    let n = spec.out_dim();
    let mut j = if spec.layernorm {
        let (xhat, inv_std) = cache.xhat_inv_std(l);
        let x = xhat.row(0);
        let inv = inv_std[0];
        let nf = n as f64;
        Matrix::from_fn(n, n, |r, c| {
            let delta = if r == c { 1.0 } else { 0.0 };
            gain[r] * inv * (delta - 1.0 / nf - x[r] * x[c] / nf)
        })
    } else {
        Matrix::identity(n)
    };
    if spec.activation == Activation::Relu {
        let pre = cache.pre_activation(l).row(0);
        for (r, &v) in pre.iter().enumerate() {
            if !relu_active(v) {
                j.row_mut(r).iter_mut().for_each(|e| *e = 0.0);
            }
        }
    }
    j
}

fn shuffle_matrix(spec: &LayerSpec) -> Matrix {
    match &spec.shuffle {
        Some(p) => p.to_matrix(),
        None => Matrix::identity(spec.in_dim()),
    }
}

fn layer_jacobian(spec: &LayerSpec, state: &NetworkState, cache: &ForwardCache, l: usize) -> Result<Matrix> {
    let params = &state.layers()[l];
    let mut j =
        post_linear_jacobian(spec, &params.ln_gain, cache, l).matmul(&linear_jacobian(spec, &params.weights))?;
    if spec.residual {
        j.add_assign_scaled(&shuffle_matrix(spec), 1.0)?;
    }
    Ok(j)
}

fn point_cache(state: &NetworkState, spec: &NetworkSpec, x0: &[f64]) -> Result<ForwardCache> {
    let x = Matrix::from_vec(1, x0.len(), x0.to_vec())?;
    forward_cached(state, spec, &x)
}

/// Jacobian of the composed map after layer `from` (exclusive), including
/// the restore permutation.
fn tail_jacobian(state: &NetworkState, spec: &NetworkSpec, cache: &ForwardCache, from: usize) -> Result<Matrix> {
    let mut j = match spec.restore_permutation() {
        Some(r) => r.to_matrix(),
        None => Matrix::identity(spec.out_dim()),
    };
    for l in (from + 1..spec.layers.len()).rev() {
        j = j.matmul(&layer_jacobian(&spec.layers[l], state, cache, l)?)?;
    }
    Ok(j)
}

/// Jacobian of the full network at `x0`, `out_dim x in_dim`.
pub fn jacobian_at(state: &NetworkState, spec: &NetworkSpec, x0: &[f64]) -> Result<Matrix> {
    let cache = point_cache(state, spec, x0)?;
    let mut j = tail_jacobian(state, spec, &cache, 0)?;
    j = j.matmul(&layer_jacobian(&spec.layers[0], state, &cache, 0)?)?;
    Ok(j)
}

/// The network's linear map, taken as the Jacobian at the origin. Exact for
/// stacks without activations or layer norm; with ReLU every unit counts as
/// active at zero.
pub fn end_to_end_linear_map(state: &NetworkState, spec: &NetworkSpec) -> Result<Matrix> {
    jacobian_at(state, spec, &alloc::vec![0.0; spec.in_dim()])
}

/// Attribution of an output error to the blocks of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultReport {
    pub layer: usize,
    /// `|proj_{V_k} e| / |e|` for each block `k`.
    pub scores: Vec<f64>,
    /// First block with the highest score.
    pub localized_block: usize,
    /// Dimension of each subspace `V_k`.
    pub subspace_dims: Vec<usize>,
    /// Blocks whose output directions were linearly dependent.
    pub rank_deficient: Vec<bool>,
}

/// Scores each block of `p` (over the outputs of `layer`) by how much of the
/// output error `error` lies in the span `V_k` that the block can reach,
/// with the network linearized at `x0`. `layer` defaults to the last
/// block-diagonal layer.
pub fn fault_localize(
    state: &NetworkState,
    spec: &NetworkSpec,
    error: &[f64],
    p: &BlockPartition,
    layer: Option<usize>,
    x0: &[f64],
) -> Result<FaultReport> {
    if error.len() != spec.out_dim() {
        return Err(Error::shape("error vector length differs from the output dimension"));
    }
    let enorm = math::sqrt(error.iter().map(|v| v * v).sum());
    if enorm == 0.0 {
        return Err(Error::invalid("zero error vector cannot be localized"));
    }
    let layer = match layer {
        Some(l) if l < spec.layers.len() => l,
        Some(l) => return Err(Error::invalid(format!("layer {l} out of range"))),
        None => spec
            .layers
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::BlockDiagonal { .. }))
            .ok_or_else(|| Error::invalid("network has no block-diagonal layer"))?,
    };
    let lspec = &spec.layers[layer];
    if p.dim() != lspec.out_dim() {
        return Err(Error::shape("partition dimension differs from the layer output"));
    }
    let cache = point_cache(state, spec, x0)?;
    let reach = tail_jacobian(state, spec, &cache, layer)?.matmul(&post_linear_jacobian(
        lspec,
        &state.layers()[layer].ln_gain,
        &cache,
        layer,
    ))?;
    let mut scores = Vec::with_capacity(p.k());
    let mut dims = Vec::with_capacity(p.k());
    let mut deficient = Vec::with_capacity(p.k());
    for cols in p.all_members() {
        let vectors: Vec<Vec<f64>> = cols.iter().map(|&c| reach.col(c)).collect();
        let basis = orthonormal_basis(&vectors, 1e-10);
        scores.push(basis.projection_norm(error) / enorm);
        dims.push(basis.vectors.len());
        deficient.push(basis.rank_deficient);
    }
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    Ok(FaultReport { layer, scores, localized_block: best, subspace_dims: dims, rank_deficient: deficient })
}
