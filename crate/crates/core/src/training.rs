//! Losses, optimizers and the mini-batch training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::math;
use crate::nets::{
    backward, embed, embed_backward, forward, forward_cached, EmbeddingSpec, EmbeddingTables, NetworkSpec,
    NetworkState, ParamSet,
};
use crate::{Error, Result, SeededRng};

/// Mean squared error over all entries, with its gradient.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("prediction and target shapes differ"));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("empty prediction"));
    }
    let n = pred.as_slice().len() as f64;
    let diff = pred.sub(target)?;
    Ok((diff.frobenius_norm_sq() / n, diff.scale(2.0 / n)))
}

/// Smallest target-class probability used inside the logarithm.
pub const FOCAL_PROB_FLOOR: f64 = 1e-12;

/// One focal-loss term and its gradient with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalTerm {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
    /// The target probability was raised to [`FOCAL_PROB_FLOOR`].
    pub clamped: bool,
}

/// `-alpha (1 - p_t)^gamma ln p_t` for softmax probabilities `probs`.
pub fn focal_loss(probs: &[f64], target: usize, alpha: f64, gamma: f64) -> Result<FocalTerm> {
    if target >= probs.len() {
        return Err(Error::invalid(format!("target class {target} outside {} classes", probs.len())));
    }
    if !alpha.is_finite() || !gamma.is_finite() || alpha <= 0.0 || gamma < 0.0 {
        return Err(Error::invalid("focal loss needs alpha > 0 and gamma >= 0"));
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("probabilities must lie in [0, 1] and sum to 1"));
    }
    let clamped = probs[target] < FOCAL_PROB_FLOOR;
    let pt = probs[target].max(FOCAL_PROB_FLOOR);
    let q = 1.0 - pt;
    let log_pt = math::ln(pt);
    let loss = -alpha * math::pow(q, gamma) * log_pt;
    // d loss / d p_t, then through the softmax: d p_t / d z_j = p_t (delta_tj - p_j).
    let mod_term = if q > 0.0 && gamma > 0.0 { gamma * math::pow(q, gamma - 1.0) * log_pt } else { 0.0 };
    let dl_dpt = alpha * (mod_term - math::pow(q, gamma) / pt);
    let grad_logits =
        probs.iter().enumerate().map(|(j, &pj)| dl_dpt * pt * (if j == target { 1.0 } else { 0.0 } - pj)).collect();
    Ok(FocalTerm { loss, grad_logits, clamped })
}

/// Row-wise softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = math::exp(*v - max);
            s += *v;
        }
        r.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Mean focal loss over a batch of logits; targets are one-hot rows.
pub fn focal_loss_batch(logits: &Matrix, target: &Matrix, alpha: f64, gamma: f64) -> Result<(f64, Matrix)> {
    if logits.shape() != target.shape() || logits.is_empty() {
        return Err(Error::shape("logit and target shapes differ"));
    }
    let probs = softmax(logits);
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for i in 0..logits.rows() {
        let t = argmax(target.row(i));
        let term = focal_loss(probs.row(i), t, alpha, gamma)?;
        total += term.loss;
        grad.row_mut(i).iter_mut().zip(&term.grad_logits).for_each(|(g, v)| *g = v / n);
    }
    Ok((total / n, grad))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    /// Softmax focal loss against one-hot targets.
    Focal {
        alpha: f64,
        gamma: f64,
    },
}

impl LossKind {
    pub fn eval(&self, pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
        match *self {
            Self::Mse => mse_loss(pred, target),
            Self::Focal { alpha, gamma } => focal_loss_batch(pred, target, alpha, gamma),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for every tensor of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl OptimizerState {
    pub fn new(params: &impl ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|s| vec![0.0; s.len()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One optimizer update. Nothing is modified if any gradient entry is
/// non-finite; the error names the owning layer.
pub fn optimizer_step(
    opt: &Optimizer,
    state: &mut OptimizerState,
    params: &mut impl ParamSet,
    grads: &impl ParamSet,
    lr: f64,
) -> Result<()> {
    let g = grads.tensors();
    if g.len() != state.m.len() || g.iter().zip(&state.m).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("gradient layout differs from optimizer state"));
    }
    for (s, owner) in g.iter().zip(grads.tensor_owners()) {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: owner });
        }
    }
    state.t += 1;
    let mut p = params.tensors_mut();
    match *opt {
        Optimizer::Sgd => {
            for (pt, gt) in p.iter_mut().zip(&g) {
                pt.iter_mut().zip(gt.iter()).for_each(|(w, d)| *w -= lr * d);
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let t = state.t as f64;
            let c1 = 1.0 - math::pow(beta1, t);
            let c2 = 1.0 - math::pow(beta2, t);
            for ((pt, gt), (mt, vt)) in p.iter_mut().zip(&g).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
                for i in 0..gt.len() {
                    let d = gt[i];
                    mt[i] = beta1 * mt[i] + (1.0 - beta1) * d;
                    vt[i] = beta2 * vt[i] + (1.0 - beta2) * d * d;
                    pt[i] -= lr * (mt[i] / c1) / (math::sqrt(vt[i] / c2) + eps);
                }
            }
        }
    }
    Ok(())
}

/// A source of training batches and a fixed validation set.
pub trait Task {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// The batch for training step `step`; the same step always yields the
    /// same batch.
    fn train_batch(&self, step: u64, batch: usize) -> Result<(Matrix, Matrix)>;
    fn validation(&self) -> (&Matrix, &Matrix);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    /// Validation cadence in steps.
    pub eval_every: u64,
    /// Stop after this many evaluations without a new best.
    pub early_stop_patience: Option<usize>,
    /// Seed of the weight initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 128,
            lr: 1e-3,
            optimizer: Optimizer::default(),
            loss: LossKind::Mse,
            eval_every: 100,
            early_stop_patience: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<u64>,
    /// Loss of the most recent training batch at each evaluation (at step 0,
    /// the loss on batch 0 before any update).
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_step: u64,
    pub best_val: f64,
    pub stopped_early: bool,
    pub diverged: bool,
}

pub struct TrainOutcome {
    /// Parameters at the best validation loss.
    pub state: NetworkState,
    pub history: TrainHistory,
}

pub fn evaluate(state: &NetworkState, spec: &NetworkSpec, loss: &LossKind, x: &Matrix, y: &Matrix) -> Result<f64> {
    Ok(loss.eval(&forward(state, spec, x)?, y)?.0)
}

/// Mini-batch training from a He initialization seeded by `cfg.seed`.
/// Validation runs at step 0, every `eval_every` steps and after the last
/// step. A non-finite loss or gradient ends the run with `diverged` set; the
/// best checkpoint so far is returned either way.
pub fn train(spec: &NetworkSpec, task: &dyn Task, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let state = NetworkState::init_he(spec, &mut SeededRng::new(cfg.seed))?;
    train_from(spec, state, task, cfg)
}

pub fn train_from(
    spec: &NetworkSpec,
    mut state: NetworkState,
    task: &dyn Task,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if task.in_dim() != spec.in_dim() || task.out_dim() != spec.out_dim() {
        return Err(Error::shape("task and network dimensions differ"));
    }
    if cfg.batch == 0 || cfg.eval_every == 0 {
        return Err(Error::invalid("batch size and eval_every must be positive"));
    }
    let (vx, vy) = task.validation();
    let mut opt = OptimizerState::new(&state);
    let mut h = TrainHistory::default();
    let first = evaluate(&state, spec, &cfg.loss, vx, vy)?;
    h.steps.push(0);
    let (x0, y0) = task.train_batch(0, cfg.batch)?;
    h.train_loss.push(evaluate(&state, spec, &cfg.loss, &x0, &y0)?);
    h.val_loss.push(first);
    h.best_val = first;
    let mut best = state.clone();
    let mut stale = 0;
    for step in 1..=cfg.steps {
        let (x, y) = task.train_batch(step, cfg.batch)?;
        let outcome = (|| -> Result<f64> {
            let cache = forward_cached(&state, spec, &x)?;
            let (l, g) = cfg.loss.eval(cache.output(), &y)?;
            if !l.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let grads = backward(&state, spec, &cache, &g)?;
            optimizer_step(&cfg.optimizer, &mut opt, &mut state, &grads, cfg.lr)?;
            Ok(l)
        })();
        let train_loss = match outcome {
            Ok(l) => l,
            Err(Error::NonFinite(_) | Error::NonFiniteGradient { .. }) => {
                h.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let v = match evaluate(&state, spec, &cfg.loss, vx, vy) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    h.diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            h.steps.push(step);
            h.train_loss.push(train_loss);
            h.val_loss.push(v);
            if v < h.best_val {
                h.best_val = v;
                h.best_step = step;
                best = state.clone();
                stale = 0;
            } else {
                stale += 1;
                if cfg.early_stop_patience.is_some_and(|p| stale >= p) {
                    h.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome { state: best, history: h })
}

/// Per-row count of steps in which an embedding row received a non-zero
/// gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateCounter {
    pub steps: u64,
    /// `counts[table][row]`; table 0 is the naive or pitch table, 1 the hand
    /// table.
    pub counts: Vec<Vec<u64>>,
}

impl UpdateCounter {
    pub fn new(tables: &EmbeddingTables, d: usize) -> Self {
        Self { steps: 0, counts: tables.tensors().iter().map(|t| vec![0; t.len() / d]).collect() }
    }

    pub fn record(&mut self, grads: &EmbeddingTables) {
        self.steps += 1;
        for (t, r) in grads.nonzero_rows() {
            self.counts[t][r] += 1;
        }
    }

    pub fn update_frequency(&self, table: usize, row: usize) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.counts[table][row] as f64 / self.steps as f64
        }
    }
}

/// Fits embedding rows to per-token targets, `batch` consecutive tokens per
/// step, counting which rows each step touches.
pub fn train_embeddings(
    spec: &EmbeddingSpec,
    tables: &mut EmbeddingTables,
    tokens: &[usize],
    targets: &Matrix,
    batch: usize,
    lr: f64,
    opt: &Optimizer,
) -> Result<UpdateCounter> {
    if targets.shape() != (tokens.len(), spec.d) {
        return Err(Error::shape("targets must be tokens x d"));
    }
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut counter = UpdateCounter::new(tables, spec.d);
    let mut st = OptimizerState::new(tables);
    for start in (0..tokens.len()).step_by(batch) {
        let end = (start + batch).min(tokens.len());
        let chunk = &tokens[start..end];
        let e = embed(spec, tables, chunk)?;
        let (_, g) = mse_loss(&e, &targets.row_block(start, end))?;
        let grads = embed_backward(spec, chunk, &g)?;
        counter.record(&grads);
        optimizer_step(opt, &mut st, tables, &grads, lr)?;
    }
    Ok(counter)
}
