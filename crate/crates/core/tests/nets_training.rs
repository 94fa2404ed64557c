//! Network construction, forward semantics and the training loop.

use blockmix_core::dense::{permute_cols, Matrix};
use blockmix_core::nets::{
    end_to_end_linear_map, forward, Activation, LayerSpec, NetworkSpec, NetworkState, StackOptions,
};
use blockmix_core::synthgen::{generate, TaskKind, TaskSpec};
use blockmix_core::topology::{BlockPartition, ShuffleSchedule};
use blockmix_core::training::{evaluate, mse_loss, train, LossKind, Optimizer, TrainConfig};
use blockmix_core::SeededRng;
use proptest::prelude::*;

fn linear() -> StackOptions {
    StackOptions { activation: Activation::None, residual: false, layernorm: false }
}

fn rand_x(n: usize, d: usize, seed: u64) -> Matrix {
    Matrix::from_vec(n, d, SeededRng::new(seed).normals(n * d)).unwrap()
}

#[test]
fn linear_stack_output_matches_composed_matrix() {
    let p = BlockPartition::contiguous(12, 3).unwrap();
    let spec = NetworkSpec::block_stack(&p, 3, &ShuffleSchedule::Random { seed: 4 }, linear(), true).unwrap();
    let state = NetworkState::init_he(&spec, &mut SeededRng::new(1)).unwrap();
    let m = end_to_end_linear_map(&state, &spec).unwrap();
    let x = rand_x(5, 12, 2);
    let y = forward(&state, &spec, &x).unwrap();
    let expect = x.matmul_nt(&m).unwrap();
    assert!(y.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn block_layer_is_sparse_in_its_partition() {
    // Without shuffles, output block b depends only on input block b.
    let p = BlockPartition::new(vec![0, 1, 0, 1, 2, 2], 3).unwrap();
    let spec = NetworkSpec::block_stack(&p, 2, &ShuffleSchedule::None, linear(), false).unwrap();
    let state = NetworkState::init_he(&spec, &mut SeededRng::new(3)).unwrap();
    let m = end_to_end_linear_map(&state, &spec).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            if p.block_of(i) != p.block_of(j) {
                assert_eq!(m[(i, j)], 0.0);
            }
        }
    }
}

#[test]
fn he_init_scale() {
    let spec = NetworkSpec::new(vec![LayerSpec::dense(400, 50)], false).unwrap();
    let mut sum = 0.0;
    for seed in 0..40 {
        let s = NetworkState::init_he(&spec, &mut SeededRng::new(seed)).unwrap();
        sum += s.layers()[0].weights[0].frobenius_norm_sq();
    }
    // E ||W||^2 = rows * cols * 2 / cols = 100.
    let mean = sum / 40.0;
    assert!((mean - 100.0).abs() < 3.0, "{mean}");
}

#[test]
fn zero_learning_rate_keeps_initial_loss() {
    let task = generate(&TaskSpec::new(TaskKind::HighrankRecovery, 16, 1, 0)).unwrap();
    let spec = NetworkSpec::dense_stack(16, 2, linear()).unwrap();
    let cfg = TrainConfig { steps: 30, batch: 8, lr: 0.0, eval_every: 10, seed: 5, ..TrainConfig::default() };
    let out = train(&spec, &task, &cfg).unwrap();
    let init = NetworkState::init_he(&spec, &mut SeededRng::new(5)).unwrap();
    let (vx, vy) = blockmix_core::training::Task::validation(&task);
    let expect = evaluate(&init, &spec, &LossKind::Mse, vx, vy).unwrap();
    assert!(out.history.val_loss.iter().all(|&v| v == expect));
    assert_eq!(out.history.best_val, expect);
}

#[test]
fn training_is_deterministic_and_learns() {
    let task = generate(&TaskSpec::new(TaskKind::HighrankRecovery, 16, 1, 7)).unwrap();
    let spec = NetworkSpec::dense_stack(16, 1, linear()).unwrap();
    let cfg = TrainConfig { steps: 400, batch: 32, lr: 1e-2, eval_every: 50, seed: 1, ..TrainConfig::default() };
    let a = train(&spec, &task, &cfg).unwrap();
    let b = train(&spec, &task, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert!(a.history.best_val < 0.05 * a.history.val_loss[0]);
    let sgd = TrainConfig { optimizer: Optimizer::Sgd, lr: 0.05, ..cfg };
    let c = train(&spec, &task, &sgd).unwrap();
    assert!(c.history.best_val < 0.5 * c.history.val_loss[0]);
}

#[test]
fn mse_gradient_scaling() {
    let p = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    let t = Matrix::zeros(2, 2);
    let (l, g) = mse_loss(&p, &t).unwrap();
    assert_eq!(l, 30.0 / 4.0);
    assert_eq!(g.as_slice(), &[0.5, 1.0, 1.5, 2.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn first_shuffle_absorbs_input_permutation(seed in any::<u64>()) {
        // Feeding column-permuted inputs to a network whose first shuffle
        // undoes that permutation gives the original network's output.
        let p = BlockPartition::contiguous(8, 2).unwrap();
        let sched = ShuffleSchedule::Random { seed };
        let spec = NetworkSpec::block_stack(&p, 2, &sched, linear(), false).unwrap();
        let state = NetworkState::init_he(&spec, &mut SeededRng::new(seed ^ 9)).unwrap();
        let q = SeededRng::new(seed ^ 3).permutation(8);
        let mut layers = spec.layers.clone();
        let first = layers[0].shuffle.clone().unwrap_or_else(|| blockmix_core::PermutationVec::identity(8));
        layers[0] = layers[0].clone().with_shuffle(q.inverse().then(&first).unwrap());
        let moved = NetworkSpec::new(layers, false).unwrap();
        let moved_state = NetworkState::from_layers(&moved, state.layers().to_vec()).unwrap();
        let x = rand_x(3, 8, seed);
        let xq = permute_cols(&x, &q).unwrap();
        let a = forward(&state, &spec, &x).unwrap();
        let b = forward(&moved_state, &moved, &xq).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
