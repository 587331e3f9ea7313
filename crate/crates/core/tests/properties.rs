use fedtan_core::data::{partition_by_label, partition_iid, synth_gaussian_with};
use fedtan_core::tensor::{
    batch_mean, bn_forward, variance_against, BnLayerParams, BnStats,
};
use ndarray::Array2;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iid_partitions_are_disjoint_and_cover(
        per_class in 3usize..20,
        clients in 1usize..8,
        seed in 0u64..1000,
    ) {
        let ds = synth_gaussian_with(3, per_class, 4, 1.0, seed).unwrap();
        prop_assume!(clients <= ds.len());
        let p = partition_iid(&ds, clients, seed).unwrap();
        let mut all: Vec<usize> = p.union_indices();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        let total: f64 = p.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (list, w) in p.client_indices.iter().zip(&p.weights) {
            prop_assert!((w - list.len() as f64 / ds.len() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn label_shards_hold_exactly_k_classes(
        per_class in 5usize..12,
        k in 1usize..10,
        seed in 0u64..100,
    ) {
        let ds = synth_gaussian_with(10, per_class, 3, 1.0, seed).unwrap();
        let p = partition_by_label(&ds, 5, k).unwrap();
        for list in &p.client_indices {
            let held: std::collections::HashSet<usize> =
                list.iter().map(|&i| ds.labels[i]).collect();
            prop_assert_eq!(held.len(), k);
        }
    }

    #[test]
    fn normalized_batch_has_zero_mean_and_shrunk_variance(
        rows in 2usize..12,
        cols in 1usize..6,
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let input = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-5.0..5.0));
        let params = BnLayerParams::identity(cols, 1e-5);
        let (_, stats, normalized) = bn_forward(&input.view(), &params, None).unwrap();
        let m = batch_mean(&normalized.view());
        let v = variance_against(&normalized.view(), &m);
        for j in 0..cols {
            prop_assert!(m[j].abs() < 1e-12);
            let expected = stats.variance[j] / (stats.variance[j] + 1e-5);
            prop_assert!((v[j] - expected).abs() <= 1e-10 * expected.max(1.0));
        }
    }

    #[test]
    fn forward_override_with_own_stats_is_identity(
        rows in 1usize..10,
        cols in 1usize..5,
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let input = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-3.0..3.0));
        let params = BnLayerParams::identity(cols, 1e-5);
        let (out, stats, _) = bn_forward(&input.view(), &params, None).unwrap();
        let copy = BnStats { mean: stats.mean.clone(), variance: stats.variance.clone() };
        let (out2, _, _) = bn_forward(&input.view(), &params, Some(&copy)).unwrap();
        prop_assert_eq!(out, out2);
    }
}
