//! Library-level checks of the experiment runner.

use blockmix::config::ExperimentConfig;
use blockmix::experiment::{config_hash, run, Status};
use blockmix_core::nets::{forward, NetworkState};
use blockmix_core::synthgen::generate;
use blockmix_core::training::{LossKind, Task};
use blockmix_core::SeededRng;
use proptest::prelude::*;

const ZERO_LR: &str = r#"
experiment = "svd_paradox"
seed = 2

[task]
kind = "highrank_recovery"
dim = 16

[train]
steps = 20
batch = 8
lr = 0.0
eval_every = 10

[[variants]]
name = "only"
arch = "v2"
blocks = 4
layernorm = true
"#;

#[test]
fn zero_learning_rate_reports_initial_loss() {
    let cfg = ExperimentConfig::from_toml(ZERO_LR).unwrap();
    let out = run(&cfg).unwrap();
    let rec = &out.result.records[0];
    assert_eq!(rec.status, Status::Ok);
    assert_eq!(rec.best_step, 0);

    let task = generate(&cfg.task.as_ref().unwrap().to_spec(16, cfg.task_seed())).unwrap();
    let (spec, _, _) = blockmix::experiment::build_network(&cfg.variants[0], &task, &cfg).unwrap();
    let state = NetworkState::init_he(&spec, &mut SeededRng::new(cfg.init_seed())).unwrap();
    let (vx, vy) = task.validation();
    let expect = LossKind::Mse.eval(&forward(&state, &spec, vx).unwrap(), vy).unwrap().0;
    assert_eq!(rec.val_loss, expect);
}

#[test]
fn wide_variant_gets_projections() {
    let text = ZERO_LR.replace("blocks = 4", "blocks = 4\nwidth = 32");
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let task = generate(&cfg.task.as_ref().unwrap().to_spec(16, 0)).unwrap();
    let (spec, core, _) = blockmix::experiment::build_network(&cfg.variants[0], &task, &cfg).unwrap();
    assert_eq!(spec.layers.len(), 4);
    assert_eq!(core, 1..3);
    assert_eq!((spec.in_dim(), spec.out_dim()), (16, 16));
    let out = run(&cfg).unwrap();
    assert!(out.result.records[0].analyzed_matrix.contains("32x32"));
}

#[test]
fn output_dir_does_not_change_the_hash() {
    let mut a = ExperimentConfig::from_toml(ZERO_LR).unwrap();
    let h = config_hash(&a).unwrap();
    a.output_dir = Some("/somewhere/else".into());
    assert_eq!(config_hash(&a).unwrap(), h);
    a.seed += 1;
    assert_ne!(config_hash(&a).unwrap(), h);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn config_json_round_trip(seed in any::<u64>(), steps in 1u64..10_000, lr in 1e-5f64..1.0) {
        let mut cfg = ExperimentConfig::from_toml(ZERO_LR).unwrap();
        cfg.seed = seed;
        cfg.train.steps = steps;
        cfg.train.lr = lr;
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(config_hash(&back).unwrap(), config_hash(&cfg).unwrap());
        prop_assert_eq!(back, cfg);
    }
}
