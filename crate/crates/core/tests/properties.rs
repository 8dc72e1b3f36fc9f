use butterfly_completion::index::{index_to_tuple, tuple_to_flat};
use butterfly_completion::{
    assemble_block_sparse_oracle, load_model, random_network, save_model, Model, MultiIndexMap,
    ObservedEntries, QttNetwork, C64,
};
use proptest::prelude::*;

fn shape() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (
        0usize..=3,
        prop::sample::select(vec![1usize, 2, 4]),
        1usize..=3,
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dense_reconstruction_matches_block_sparse_product((levels, leaf, rank, seed) in shape()) {
        let net = random_network(levels, leaf, rank, seed, 1.0).unwrap();
        let dense = net.reconstruct_dense().unwrap();
        let oracle = assemble_block_sparse_oracle(&net).unwrap();
        prop_assert!(dense.relative_distance(&oracle) < 1e-12);
    }

    #[test]
    fn single_entries_match_dense((levels, leaf, rank, seed) in shape(), probe in any::<(u16, u16)>()) {
        let net = random_network(levels, leaf, rank, seed, 1.0).unwrap();
        let n = net.n();
        let (i, j) = (probe.0 as usize % n, probe.1 as usize % n);
        let dense = net.reconstruct_dense().unwrap();
        let x = net.reconstruct_entry(i, j).unwrap();
        prop_assert!((x - dense[(i, j)]).norm() <= 1e-12 * dense.frobenius_norm().max(1.0));
    }

    #[test]
    fn matvec_matches_dense((levels, leaf, rank, seed) in shape()) {
        let net = random_network(levels, leaf, rank, seed, 1.0).unwrap();
        let n = net.n();
        let v: Vec<C64> = (0..n).map(|k| C64::new(1.0 / (k + 1) as f64, (k % 3) as f64)).collect();
        let fast = net.matvec(&v).unwrap();
        let slow = net.reconstruct_dense().unwrap().matvec(&v).unwrap();
        let err: f64 = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let scale: f64 = slow.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn index_tuples_roundtrip(levels in 0usize..=6, leaf in 1usize..=5, probe in any::<u32>()) {
        let n = leaf << levels;
        let i = probe as usize % n;
        let tuple = index_to_tuple(i, levels, leaf).unwrap();
        prop_assert_eq!(tuple.len(), levels + 1);
        prop_assert!(tuple[..levels].iter().all(|&d| d < 2));
        prop_assert!(tuple[levels] < leaf);
        prop_assert_eq!(tuple_to_flat(&tuple, levels, leaf).unwrap(), i);
    }

    #[test]
    fn reversed_blocks_are_a_permutation(levels in 0usize..=6, leaf in 1usize..=3) {
        let map = MultiIndexMap::new(levels, leaf).unwrap();
        let mut seen = vec![false; map.blocks()];
        for b in 0..map.blocks() {
            let rb = map.reversed_block(b * leaf);
            prop_assert!(!seen[rb]);
            seen[rb] = true;
        }
    }

    #[test]
    fn qtt_entries_match_dense(levels in 1usize..=4, leaf in 1usize..=3, rank in 1usize..=3, seed in any::<u64>()) {
        let net = QttNetwork::random(levels, leaf, rank, seed, 1.0).unwrap();
        let dense = net.reconstruct_dense().unwrap();
        let n = net.n();
        for (i, j) in [(0, 0), (n - 1, 0), (n / 2, n - 1)] {
            prop_assert!((net.reconstruct_entry(i, j).unwrap() - dense[(i, j)]).norm() < 1e-12 * dense.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn triplet_files_roundtrip(n in 1usize..20, seed in any::<u64>()) {
        let count = (n * n).min(7);
        let pairs = butterfly_completion::sample_omega(n, count, seed, None).unwrap();
        let data = ObservedEntries::from_fn(n, &pairs, |i, j| C64::new(i as f64 / 3.0, -(j as f64) * 1e-17)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["t.csv", "t.csv.gz"] {
            let path = dir.path().join(name);
            data.save_triplets(&path).unwrap();
            let back = ObservedEntries::load_triplets(&path, None).unwrap();
            prop_assert_eq!(back.n(), n);
            prop_assert_eq!(back.pairs(), data.pairs());
            prop_assert_eq!(back.values(), data.values());
        }
    }
}

#[test]
fn model_files_roundtrip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let net = random_network(3, 2, 3, 17, 0.5).unwrap();
    let path = dir.path().join("net.json");
    save_model(&path, &Model::Butterfly(net.clone())).unwrap();
    assert_eq!(load_model(&path).unwrap(), Model::Butterfly(net));
}

#[test]
fn sampled_pairs_are_distinct_and_in_range() {
    let pairs = butterfly_completion::sample_omega(32, 500, 3, None).unwrap();
    let set: std::collections::HashSet<_> = pairs.iter().copied().collect();
    assert_eq!(set.len(), 500);
    assert!(pairs.iter().all(|&(i, j)| i < 32 && j < 32));
    assert_eq!(
        pairs,
        butterfly_completion::sample_omega(32, 500, 3, None).unwrap()
    );
}
