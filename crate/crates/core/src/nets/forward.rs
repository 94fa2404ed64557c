//! Batched forward and reverse passes. Batches are row-major, one sample per
//! row.

use alloc::vec::Vec;

use super::{Activation, LayerKind, LayerParams, LayerSpec, NetworkSpec, NetworkState, LAYERNORM_EPS};
use crate::dense::Matrix;
use crate::math;
use crate::{Error, Result};

/// Gradients with respect to every parameter and to the network input.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrads {
    pub layers: Vec<LayerParams>,
    pub input: Matrix,
}

struct LayerCache {
    /// Layer input after the shuffle.
    h: Matrix,
    /// Normalized `z` and per-row inverse standard deviation (layer norm only).
    xhat: Matrix,
    inv_std: Vec<f64>,
    /// Input to the activation.
    pre_act: Matrix,
}

/// Intermediate values recorded by [`forward_cached`].
pub struct ForwardCache {
    fingerprint: u64,
    version: u64,
    layers: Vec<LayerCache>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Input to the activation of layer `l`, one row per sample.
    pub fn pre_activation(&self, l: usize) -> &Matrix {
        &self.layers[l].pre_act
    }

    pub(super) fn xhat_inv_std(&self, l: usize) -> (&Matrix, &[f64]) {
        (&self.layers[l].xhat, &self.layers[l].inv_std)
    }
}

fn check_input(spec: &NetworkSpec, state: &NetworkState, x: &Matrix) -> Result<()> {
    spec.validate()?;
    if state.layers().len() != spec.layers.len() {
        return Err(Error::shape("state and spec differ in layer count"));
    }
    if x.cols() != spec.in_dim() {
        return Err(Error::shape(alloc::format!("input has {} columns, network expects {}", x.cols(), spec.in_dim())));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("network input"));
    }
    Ok(())
}

fn shuffled(spec: &LayerSpec, x: &Matrix) -> Matrix {
    match &spec.shuffle {
        Some(p) => x.select_cols(p.mapping()),
        None => x.clone(),
    }
}

fn linear(spec: &LayerSpec, params: &LayerParams, h: &Matrix) -> Result<Matrix> {
    match &spec.kind {
        LayerKind::Dense { .. } => h.matmul_nt(&params.weights[0]),
        LayerKind::BlockDiagonal { partition } => {
            let mut z = Matrix::zeros(h.rows(), h.cols());
            for (w, cols) in params.weights.iter().zip(partition.all_members()) {
                let zb = h.select_cols(&cols).matmul_nt(w)?;
                scatter_cols(&mut z, &zb, &cols, false);
            }
            Ok(z)
        }
    }
}

/// `dst[:, cols[j]] = src[:, j]`, or `+=` when `accumulate` is set.
fn scatter_cols(dst: &mut Matrix, src: &Matrix, cols: &[usize], accumulate: bool) {
    for i in 0..src.rows() {
        let s = src.row(i);
        let d = dst.row_mut(i);
        for (j, &c) in cols.iter().enumerate() {
            if accumulate {
                d[c] += s[j];
            } else {
                d[c] = s[j];
            }
        }
    }
}

fn layernorm(z: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, Matrix, Vec<f64>) {
    let n = z.cols() as f64;
    let mut xhat = Matrix::zeros(z.rows(), z.cols());
    let mut y = Matrix::zeros(z.rows(), z.cols());
    let mut inv_std = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let r = z.row(i);
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / math::sqrt(var + LAYERNORM_EPS);
        inv_std.push(inv);
        for j in 0..z.cols() {
            let xh = (r[j] - mean) * inv;
            xhat[(i, j)] = xh;
            y[(i, j)] = gain[j] * xh + bias[j];
        }
    }
    (y, xhat, inv_std)
}

/// ReLU gate. Zero counts as active, which makes the linearization at the
/// origin the identity.
#[inline]
pub(super) fn relu_active(v: f64) -> bool {
    v >= 0.0
}

fn run(state: &NetworkState, spec: &NetworkSpec, x: &Matrix, keep: bool) -> Result<(Matrix, Vec<LayerCache>)> {
    check_input(spec, state, x)?;
    let mut caches = Vec::new();
    let mut cur = x.clone();
    for (l, params) in spec.layers.iter().zip(state.layers()) {
        let h = shuffled(l, &cur);
        let z = linear(l, params, &h)?;
        let (pre_act, xhat, inv_std) = if l.layernorm {
            layernorm(&z, &params.ln_gain, &params.ln_bias)
        } else {
            (z, Matrix::zeros(0, 0), Vec::new())
        };
        let mut out = pre_act.clone();
        if l.activation == Activation::Relu {
            out.as_mut_slice().iter_mut().for_each(|v| {
                if !relu_active(*v) {
                    *v = 0.0;
                }
            });
        }
        if l.residual {
            out.add_assign_scaled(&h, 1.0)?;
        }
        if keep {
            caches.push(LayerCache { h, xhat, inv_std, pre_act });
        }
        cur = out;
    }
    if let Some(r) = spec.restore_permutation() {
        cur = cur.select_cols(r.mapping());
    }
    if !cur.is_finite() {
        return Err(Error::NonFinite("network output"));
    }
    Ok((cur, caches))
}

pub fn forward(state: &NetworkState, spec: &NetworkSpec, x: &Matrix) -> Result<Matrix> {
    Ok(run(state, spec, x, false)?.0)
}

pub fn forward_cached(state: &NetworkState, spec: &NetworkSpec, x: &Matrix) -> Result<ForwardCache> {
    let (output, layers) = run(state, spec, x, true)?;
    Ok(ForwardCache { fingerprint: spec.fingerprint(), version: state.version(), layers, output })
}

/// Reverse pass from `grad_out` (same shape as the output). Fails with
/// [`Error::StaleCache`] if the cache came from another spec or from the
/// state before a parameter update.
pub fn backward(
    state: &NetworkState,
    spec: &NetworkSpec,
    cache: &ForwardCache,
    grad_out: &Matrix,
) -> Result<NetworkGrads> {
    if cache.fingerprint != spec.fingerprint() || cache.version != state.version() {
        return Err(Error::StaleCache);
    }
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::shape("output gradient shape differs from the cached output"));
    }
    let mut g = grad_out.clone();
    if let Some(r) = spec.restore_permutation() {
        let mut back = Matrix::zeros(g.rows(), g.cols());
        scatter_cols(&mut back, &g, r.mapping(), false);
        g = back;
    }
    let mut grads: Vec<LayerParams> = Vec::with_capacity(spec.layers.len());
    for ((l, params), c) in spec.layers.iter().zip(state.layers()).zip(&cache.layers).rev() {
        let mut lp = LayerParams::zeros_like(l);
        let mut dpre = g.clone();
        if l.activation == Activation::Relu {
            for (d, &v) in dpre.as_mut_slice().iter_mut().zip(c.pre_act.as_slice()) {
                if !relu_active(v) {
                    *d = 0.0;
                }
            }
        }
        let dz = if l.layernorm { layernorm_backward(&dpre, c, &params.ln_gain, &mut lp) } else { dpre };
        let mut dh = match &l.kind {
            LayerKind::Dense { .. } => {
                lp.weights[0] = dz.matmul_tn(&c.h)?;
                dz.matmul(&params.weights[0])?
            }
            LayerKind::BlockDiagonal { partition } => {
                let mut dh = Matrix::zeros(dz.rows(), dz.cols());
                for ((w, gw), cols) in params.weights.iter().zip(&mut lp.weights).zip(partition.all_members()) {
                    let dzb = dz.select_cols(&cols);
                    *gw = dzb.matmul_tn(&c.h.select_cols(&cols))?;
                    scatter_cols(&mut dh, &dzb.matmul(w)?, &cols, false);
                }
                dh
            }
        };
        if l.residual {
            dh.add_assign_scaled(&g, 1.0)?;
        }
        g = match &l.shuffle {
            Some(p) => {
                let mut dx = Matrix::zeros(dh.rows(), dh.cols());
                scatter_cols(&mut dx, &dh, p.mapping(), false);
                dx
            }
            None => dh,
        };
        grads.push(lp);
    }
    grads.reverse();
    Ok(NetworkGrads { layers: grads, input: g })
}

fn layernorm_backward(dy: &Matrix, c: &LayerCache, gain: &[f64], lp: &mut LayerParams) -> Matrix {
    let n = dy.cols() as f64;
    let mut dz = Matrix::zeros(dy.rows(), dy.cols());
    for i in 0..dy.rows() {
        let dyr = dy.row(i);
        let xr = c.xhat.row(i);
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..dyr.len() {
            lp.ln_gain[j] += dyr[j] * xr[j];
            lp.ln_bias[j] += dyr[j];
            let d = dyr[j] * gain[j];
            mean_d += d;
            mean_dx += d * xr[j];
        }
        mean_d /= n;
        mean_dx /= n;
        let inv = c.inv_std[i];
        let out = dz.row_mut(i);
        for j in 0..dyr.len() {
            out[j] = inv * (dyr[j] * gain[j] - mean_d - xr[j] * mean_dx);
        }
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::topology::{BlockPartition, ShuffleSchedule};
    use crate::SeededRng;

    fn loss(state: &NetworkState, spec: &NetworkSpec, x: &Matrix, t: &Matrix) -> f64 {
        let y = forward(state, spec, x).unwrap();
        0.5 * y.sub(t).unwrap().frobenius_norm_sq()
    }

    fn grad_check(spec: &NetworkSpec, seed: u64) {
        let mut rng = SeededRng::new(seed);
        let mut state = NetworkState::init_he(spec, &mut rng).unwrap();
        for l in state.layers_mut() {
            for (g, b) in l.ln_gain.iter_mut().zip(&mut l.ln_bias) {
                *g = 1.0 + 0.3 * rng.normal();
                *b = 0.3 * rng.normal();
            }
        }
        let x = Matrix::from_vec(5, spec.in_dim(), rng.normals(5 * spec.in_dim())).unwrap();
        let t = Matrix::from_vec(5, spec.out_dim(), rng.normals(5 * spec.out_dim())).unwrap();
        let cache = forward_cached(&state, spec, &x).unwrap();
        let dy = cache.output().sub(&t).unwrap();
        let grads = backward(&state, spec, &cache, &dy).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|s| s.to_vec()).collect();
        let h = 1e-6;
        for (ti, a) in analytic.iter().enumerate() {
            for k in (0..a.len()).step_by(3) {
                let orig = state.tensors()[ti][k];
                state.tensors_mut()[ti][k] = orig + h;
                let up = loss(&state, spec, &x, &t);
                state.tensors_mut()[ti][k] = orig - h;
                let down = loss(&state, spec, &x, &t);
                state.tensors_mut()[ti][k] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - a[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "tensor {ti} entry {k}: fd {fd} vs {}", a[k]);
            }
        }
        // Input gradient.
        for k in (0..x.as_slice().len()).step_by(4) {
            let mut xp = x.clone();
            xp.as_mut_slice()[k] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[k] -= h;
            let fd = (loss(&state, spec, &xp, &t) - loss(&state, spec, &xm, &t)) / (2.0 * h);
            let a = grads.input.as_slice()[k];
            assert!((fd - a).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn gradients_dense_relu_layernorm() {
        let opts = StackOptions { activation: Activation::Relu, residual: true, layernorm: true };
        grad_check(&NetworkSpec::dense_stack(6, 3, opts).unwrap(), 1);
    }

    #[test]
    fn gradients_block_shuffled() {
        let p = BlockPartition::contiguous(8, 4).unwrap();
        let opts = StackOptions { activation: Activation::Relu, residual: false, layernorm: true };
        grad_check(&NetworkSpec::block_stack(&p, 3, &ShuffleSchedule::Random { seed: 2 }, opts, true).unwrap(), 2);
    }

    #[test]
    fn gradients_rectangular() {
        let spec = NetworkSpec::new(vec![LayerSpec::dense(5, 7), LayerSpec::dense(7, 3)], false).unwrap();
        grad_check(&spec, 3);
    }

    #[test]
    fn stale_cache_rejected() {
        let spec = NetworkSpec::dense_stack(3, 1, StackOptions::default()).unwrap();
        let mut state = NetworkState::init_he(&spec, &mut SeededRng::new(0)).unwrap();
        let x = Matrix::identity(3);
        let cache = forward_cached(&state, &spec, &x).unwrap();
        state.layers_mut()[0].weights[0][(0, 0)] += 1.0;
        assert!(matches!(backward(&state, &spec, &cache, &x), Err(Error::StaleCache)));
        let other = NetworkSpec::dense_stack(3, 1, StackOptions { residual: true, ..Default::default() }).unwrap();
        let cache = forward_cached(&state, &spec, &x).unwrap();
        assert!(matches!(backward(&state, &other, &cache, &x), Err(Error::StaleCache)));
    }

    #[test]
    fn block_layer_matches_dense_embedding() {
        let p = BlockPartition::new(vec![1, 0, 1, 0], 2).unwrap();
        let spec = NetworkSpec::new(vec![LayerSpec::block(p)], false).unwrap();
        let state = NetworkState::init_he(&spec, &mut SeededRng::new(9)).unwrap();
        let (w0, w1) = (&state.layers()[0].weights[0], &state.layers()[0].weights[1]);
        let mut full = Matrix::zeros(4, 4);
        for (w, cols) in [(w0, [1, 3]), (w1, [0, 2])] {
            for r in 0..2 {
                for c in 0..2 {
                    full[(cols[r], cols[c])] = w[(r, c)];
                }
            }
        }
        let x = Matrix::from_vec(2, 4, SeededRng::new(1).normals(8)).unwrap();
        let y = forward(&state, &spec, &x).unwrap();
        assert!(y.max_abs_diff(&x.matmul_nt(&full).unwrap()) < 1e-14);
    }

    #[test]
    fn input_width_checked() {
        let spec = NetworkSpec::dense_stack(3, 1, StackOptions::default()).unwrap();
        let state = NetworkState::init_he(&spec, &mut SeededRng::new(0)).unwrap();
        assert!(forward(&state, &spec, &Matrix::zeros(2, 4)).is_err());
    }
}
