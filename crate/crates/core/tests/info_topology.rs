//! Information measures and partitions against direct formulas and
//! reference values computed with scikit-learn.

use approx::assert_relative_eq;
use blockmix_core::info::{
    entropy, equal_frequency_bins, factorization_loss, kl_to_product, mutual_information, nmi, pairwise_nmi,
    JointHistogram,
};
use blockmix_core::synthgen::{gen_joint, generate, JointKind, TaskKind, TaskSpec};
use blockmix_core::topology::{
    adjusted_rand_index, cyclic_shift, partition_nmi_ward, partition_random, topological_regret, BlockPartition,
};
use blockmix_core::SeededRng;
use proptest::prelude::*;

/// Mutual information in bits straight from the definition.
fn mi_oracle(counts: &[u64], cx: usize, cy: usize) -> f64 {
    let n: u64 = counts.iter().sum();
    let n = n as f64;
    let px: Vec<f64> = (0..cx).map(|x| (0..cy).map(|y| counts[x * cy + y]).sum::<u64>() as f64 / n).collect();
    let py: Vec<f64> = (0..cy).map(|y| (0..cx).map(|x| counts[x * cy + y]).sum::<u64>() as f64 / n).collect();
    let mut mi = 0.0;
    for x in 0..cx {
        for y in 0..cy {
            let p = counts[x * cy + y] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).log2();
            }
        }
    }
    mi
}

#[test]
fn entropy_of_known_distributions() {
    assert_relative_eq!(entropy(&[0.5, 0.5]).unwrap(), 1.0, epsilon = 1e-15);
    assert_relative_eq!(entropy(&[0.25; 4]).unwrap(), 2.0, epsilon = 1e-15);
    assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
    assert!(entropy(&[0.5, -0.1, 0.6]).is_err());
}

#[test]
fn mutual_information_matches_definition() {
    for seed in 0..50 {
        let kind = if seed % 2 == 0 { JointKind::Independent } else { JointKind::Coupled { strength: 0.7 } };
        let (cx, cy) = (2 + seed as usize % 6, 2 + (seed as usize / 3) % 6);
        let j = gen_joint(kind, cx, cy, 500, seed).unwrap();
        let ours = mutual_information(&j).unwrap();
        assert_relative_eq!(ours, mi_oracle(j.counts(), cx, cy), epsilon = 1e-12);
        assert_relative_eq!(factorization_loss(&j).unwrap(), ours, epsilon = 1e-10);
    }
}

#[test]
fn nmi_reference_values() {
    // sklearn.metrics.normalized_mutual_info_score with arithmetic averaging.
    let j = JointHistogram::from_pairs(2, 2, [(0, 1), (0, 1), (1, 0), (1, 0)]).unwrap();
    assert_relative_eq!(nmi(&j).unwrap().value, 1.0, epsilon = 1e-12);
    let j = JointHistogram::from_pairs(2, 3, [(0, 0), (0, 0), (1, 1), (1, 2)]).unwrap();
    assert_relative_eq!(nmi(&j).unwrap().value, 0.8, epsilon = 1e-12);
    let j = JointHistogram::from_pairs(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
    assert_eq!(nmi(&j).unwrap().value, 0.0);
}

#[test]
fn kl_to_product_beats_no_other_factorization() {
    let j = gen_joint(JointKind::Coupled { strength: 0.5 }, 5, 4, 2000, 9).unwrap();
    let best = factorization_loss(&j).unwrap();
    let mut rng = SeededRng::new(1);
    for _ in 0..50 {
        let mut qx: Vec<f64> = j.marginal_x().unwrap().iter().map(|p| p * (0.5 + rng.uniform())).collect();
        let s: f64 = qx.iter().sum();
        qx.iter_mut().for_each(|v| *v /= s);
        let qy = j.marginal_y().unwrap();
        assert!(kl_to_product(&j, &qx, &qy).unwrap() >= best - 1e-12);
    }
}

#[test]
fn equal_frequency_bins_are_balanced_and_monotone() {
    let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
    let bins = equal_frequency_bins(&values, 10);
    let mut counts = [0usize; 10];
    for &b in &bins {
        counts[b] += 1;
    }
    assert!(counts.iter().all(|&c| c == 100));
    for i in 0..values.len() {
        for j in 0..values.len() {
            if values[i] < values[j] {
                assert!(bins[i] <= bins[j]);
            }
        }
    }
}

#[test]
fn adjusted_rand_reference_values() {
    // sklearn.metrics.adjusted_rand_score
    assert_relative_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_relative_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_relative_eq!(
        adjusted_rand_index(&[0, 0, 1, 2], &[0, 0, 1, 1]).unwrap(),
        0.5714285714285715,
        epsilon = 1e-12
    );
    assert_relative_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5, epsilon = 1e-12);
}

#[test]
fn ward_recovers_scrambled_groups() {
    let mut spec = TaskSpec::new(TaskKind::ExtremeModular, 64, 4, 5);
    spec.scramble = true;
    let task = generate(&spec).unwrap();
    let (x, _) = task.analysis_sample(4000).unwrap();
    let c = pairwise_nmi(&x, 16).unwrap();
    let p = partition_nmi_ward(&c, 4).unwrap();
    let truth = task.ground_truth_partition().unwrap();
    assert_eq!(adjusted_rand_index(p.assignment(), truth.assignment()).unwrap(), 1.0);
    let regret = topological_regret(&p, &c).unwrap();
    let mut rng = SeededRng::new(0);
    for _ in 0..20 {
        let r = partition_random(64, 4, &mut rng).unwrap();
        assert!(topological_regret(&r, &c).unwrap() > regret);
    }
}

proptest! {
    #[test]
    fn mi_symmetric_and_bounded(seed in any::<u64>(), cx in 1usize..7, cy in 1usize..7, s in 0.0f64..1.0) {
        let j = gen_joint(JointKind::Coupled { strength: s }, cx, cy, 300, seed).unwrap();
        let mi = mutual_information(&j).unwrap();
        prop_assert_eq!(mi, mutual_information(&j.transpose()).unwrap());
        prop_assert!(mi >= 0.0);
        prop_assert!(mi <= j.entropy_x().unwrap().min(j.entropy_y().unwrap()) + 1e-12);
    }

    #[test]
    fn cyclic_shift_moves_blocks_by_layer(seed in any::<u64>(), k in 2usize..6, m in 1usize..5, layer in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let p = partition_random(k * m, k, &mut rng).unwrap();
        let shift = cyclic_shift(&p, layer).unwrap();
        prop_assert_eq!(shift.len(), k * m);
        for (i, &src) in shift.mapping().iter().enumerate() {
            prop_assert_eq!(p.block_of(i), (p.block_of(src) + layer) % k);
        }
        let mut acc = shift.clone();
        for _ in 1..k {
            acc = acc.then(&shift).unwrap();
        }
        prop_assert!(acc.is_identity());
    }

    #[test]
    fn ari_is_label_invariant(seed in any::<u64>(), n in 2usize..30, k in 1usize..5) {
        let mut rng = SeededRng::new(seed);
        let a: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let relabel = rng.permutation(k);
        let b: Vec<usize> = a.iter().map(|&l| relabel.mapping()[l]).collect();
        prop_assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12 || a.iter().all(|&l| l == a[0]));
        prop_assert_eq!(BlockPartition::canonical(&a).unwrap(), BlockPartition::canonical(&b).unwrap());
    }
}
