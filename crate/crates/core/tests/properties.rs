mod common;

use std::io::Cursor;

use extre::{
    accuracy_metrics, diversity_from_counts, diversity_metrics, extract_two_hop, read_relation, split_interactions,
    total_degrees, write_relation_to, Discrepancy, NodeKind, NodeSpace, Oracle, SplitSpec, Stage, TaskPreset,
};
use proptest::prelude::*;

use common::*;

fn stages() -> [Stage; 2] {
    [Stage::Pretrain, Stage::Finetune]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn extraction_matches_oracle(seed in any::<u64>()) {
        let g = random_graph(seed, 10, (0.1, 0.5));
        for stage in stages() {
            let b = blocks(&g, stage);
            let oracle = Oracle::new(&g, stage);
            for block in b.blocks() {
                for v1 in 0..block.n_heads() {
                    for v2 in 0..block.n_tails() {
                        let (a, be) = oracle.pair(block.spec(), v1, v2).unwrap();
                        prop_assert!((block.alpha(v1, v2) - a).abs() <= 1e-12);
                        prop_assert!((block.beta(v1, v2) - be).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn tail_sum_identity_and_non_negativity(seed in any::<u64>()) {
        let g = random_graph(seed, 15, (0.1, 0.5));
        for stage in stages() {
            for block in blocks(&g, stage).blocks() {
                match block.discrepancy() {
                    Discrepancy::TailSum { sums } => {
                        for v1 in 0..block.n_heads() {
                            for (v2, &sum) in sums.iter().enumerate() {
                                let (a, be) = (block.alpha(v1, v2), block.beta(v1, v2));
                                prop_assert!(a >= 0.0 && be >= -1e-12 && sum >= 0.0);
                                prop_assert!((a + be - sum).abs() <= 1e-12);
                            }
                        }
                    }
                    Discrepancy::Separable { head, tail } => {
                        prop_assert!(head.iter().chain(tail).all(|&v| v >= 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn two_hop_sparsity_bound(seed in any::<u64>()) {
        let g = random_graph(seed, 15, (0.1, 0.5));
        let degrees = total_degrees(&g, Stage::Pretrain).unwrap();
        for spec in TaskPreset::Group.metapaths(Stage::Pretrain).unwrap() {
            let block = extract_two_hop::<f64>(&spec, &g, &degrees).unwrap();
            let mid = spec.middle.unwrap();
            let from = g.stage_relation(Stage::Pretrain, spec.head, mid).unwrap();
            let to = g.stage_relation(Stage::Pretrain, mid, spec.tail).unwrap();
            let mut reachable = std::collections::BTreeSet::new();
            for h in 0..block.n_heads() {
                for &m in from.forward(h) {
                    for &t in to.forward(m) {
                        reachable.insert((h, t));
                    }
                }
            }
            prop_assert!(block.nnz() <= reachable.len());
        }
    }

    #[test]
    fn asymmetric_when_degrees_differ(seed in any::<u64>()) {
        let g = random_graph(seed, 12, (0.1, 0.5));
        let b = blocks(&g, Stage::Pretrain);
        let gui = b.block(NodeKind::Group, NodeKind::Item).unwrap();
        let iug = b.block(NodeKind::Item, NodeKind::Group).unwrap();
        let d = total_degrees(&g, Stage::Pretrain).unwrap();
        for (gi, i, a) in gui.alpha_entries() {
            if d.groups[gi] != d.items[i] {
                prop_assert!((a - iug.alpha(i, gi)).abs() > 1e-12);
            } else {
                prop_assert!((a - iug.alpha(i, gi)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn degree_sums_match_edge_counts(seed in any::<u64>()) {
        let g = random_graph(seed, 20, (0.1, 0.5));
        let d = total_degrees(&g, Stage::Pretrain).unwrap();
        let group_sum: usize = d.groups.iter().sum();
        let item_sum: usize = d.items.iter().sum();
        let user_sum: usize = d.users.iter().sum();
        prop_assert_eq!(group_sum, g.z.nnz());
        prop_assert_eq!(item_sum, g.x.nnz());
        prop_assert_eq!(user_sum, g.z.nnz() + g.x.nnz());
    }

    #[test]
    fn relation_round_trip(seed in any::<u64>()) {
        let g = random_graph(seed, 20, (0.1, 0.5));
        let mut text = Vec::new();
        write_relation_to(&mut text, &g.z, &g.groups, &g.users).unwrap();
        let mut heads = NodeSpace::new(NodeKind::Group);
        let mut tails = NodeSpace::new(NodeKind::User);
        let back = read_relation(Cursor::new(text), "mem", &mut heads, &mut tails).unwrap();
        let original: Vec<(&str, &str)> = g.z.edges().map(|(h, t)| (g.groups.id(h), g.users.id(t))).collect();
        let reread: Vec<(&str, &str)> = back.edges().map(|(h, t)| (heads.id(h), tails.id(t))).collect();
        let mut a = original.clone();
        let mut b = reread.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn split_is_a_deterministic_partition(seed in any::<u64>(), tr in 0u32..=100, va in 0u32..=100) {
        let g = random_graph(seed, 20, (0.1, 0.5));
        let y = g.y.clone().unwrap();
        prop_assume!(!y.is_empty());
        let tr = tr as f64 / 100.0;
        let va = (va as f64 / 100.0).min(1.0 - tr);
        let spec = SplitSpec::new(tr, va, 1.0 - tr - va, seed).unwrap();
        let (a, b, c) = split_interactions(&y, &spec).unwrap();
        let (a2, b2, c2) = split_interactions(&y, &spec).unwrap();
        prop_assert_eq!((&a, &b, &c), (&a2, &b2, &c2));
        let mut all: Vec<(usize, usize)> = a.edges().chain(b.edges()).chain(c.edges()).collect();
        prop_assert_eq!(all.len(), y.nnz());
        all.sort();
        all.dedup();
        prop_assert_eq!(all, y.edges().collect::<Vec<_>>());
    }

    #[test]
    fn metrics_match_naive_reference(
        lists in prop::collection::vec(prop::collection::vec(0usize..8, 0..=8), 1..=5),
        test in prop::collection::vec(prop::collection::btree_set(0usize..8, 0..=4), 5),
        k in 1usize..=8,
    ) {
        let lists: Vec<Vec<usize>> = lists
            .into_iter()
            .map(|l| {
                let mut seen = Vec::new();
                for i in l {
                    if !seen.contains(&i) {
                        seen.push(i);
                    }
                }
                seen
            })
            .collect();
        let test: Vec<Vec<usize>> = test.into_iter().take(lists.len()).map(|s| s.into_iter().collect()).collect();
        let r = ranking(lists.clone());
        let rel = relation(lists.len(), 8, &test);
        let got = accuracy_metrics(&r, &rel, &[k]).unwrap()[0];
        let want = naive_accuracy(&lists, &test, k);
        prop_assert!((got.recall - want.recall).abs() < 1e-12);
        prop_assert!((got.precision - want.precision).abs() < 1e-12);
        prop_assert!((got.f1 - want.f1).abs() < 1e-12);
        prop_assert!((got.ndcg - want.ndcg).abs() < 1e-12);
        if lists.iter().any(|l| !l.is_empty()) {
            let d = diversity_metrics(&r, 8, 2.0).unwrap();
            let (e, c, gi) = naive_diversity(&lists, 8);
            prop_assert!((d.entropy - e).abs() < 1e-12);
            prop_assert!((d.coverage - c).abs() < 1e-12);
            prop_assert!((d.gini - gi).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_bounded_and_monotone(
        perm_seed in any::<u64>(),
        n_items in 5usize..40,
        relevant in prop::collection::btree_set(0usize..40, 1..10),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
        let mut list: Vec<usize> = (0..n_items).collect();
        list.shuffle(&mut rng);
        let relevant: Vec<usize> = relevant.into_iter().filter(|&i| i < n_items).collect();
        prop_assume!(!relevant.is_empty());
        let ks: Vec<usize> = (1..=n_items).collect();
        let m = accuracy_metrics(&ranking(vec![list.clone()]), &relation(1, n_items, std::slice::from_ref(&relevant)), &ks).unwrap();
        for w in m.windows(2) {
            prop_assert!(w[1].recall >= w[0].recall);
            // the ideal DCG stops growing once K covers every relevant item
            if w[0].k >= relevant.len() {
                prop_assert!(w[1].ndcg >= w[0].ndcg - 1e-12);
            }
        }
        for a in &m {
            for v in [a.recall, a.precision, a.f1, a.ndcg] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
        // permuting the tail below K changes nothing at K
        let k = n_items / 2;
        let mut shuffled = list.clone();
        shuffled[k..].shuffle(&mut rng);
        let a = accuracy_metrics(&ranking(vec![list]), &relation(1, n_items, std::slice::from_ref(&relevant)), &[k.max(1)]).unwrap();
        let b = accuracy_metrics(&ranking(vec![shuffled]), &relation(1, n_items, &[relevant]), &[k.max(1)]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn gini_permutation_invariant_and_uniform_entropy_maximal(
        counts in prop::collection::vec(0usize..20, 2..30),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        prop_assume!(counts.iter().any(|&c| c > 0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
        let mut permuted = counts.clone();
        permuted.shuffle(&mut rng);
        let a = diversity_from_counts(&counts, 2.0).unwrap();
        let b = diversity_from_counts(&permuted, 2.0).unwrap();
        prop_assert!((a.gini - b.gini).abs() < 1e-12);
        prop_assert!((a.entropy - b.entropy).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a.gini) && a.entropy >= 0.0);
        let uniform = diversity_from_counts(&vec![1; counts.len()], 2.0).unwrap();
        prop_assert!(uniform.entropy >= a.entropy - 1e-12);
    }
}

#[test]
fn oracle_on_thirty_node_graphs() {
    for seed in 0..10 {
        let g = random_graph(seed, 30, (0.1, 0.3));
        for stage in stages() {
            let b = blocks(&g, stage);
            let oracle = Oracle::new(&g, stage);
            for block in b.blocks() {
                for (v1, v2, a) in block.alpha_entries() {
                    let (oa, _) = oracle.pair(block.spec(), v1, v2).unwrap();
                    assert!((a - oa).abs() <= 1e-12, "{} ({v1},{v2}): {a} vs {oa}", block.spec());
                }
            }
        }
    }
}

#[test]
fn ndcg_can_drop_while_k_is_below_the_relevant_count() {
    // hit at rank 1, second relevant item far down: the ideal gain grows at K = 2
    let r = ranking(vec![(0..10).collect()]);
    let m = accuracy_metrics(&r, &relation(1, 10, &[vec![0, 9]]), &[1, 2]).unwrap();
    assert_eq!(m[0].ndcg, 1.0);
    assert!(m[1].ndcg < m[0].ndcg);
}
