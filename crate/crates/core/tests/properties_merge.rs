mod common;

use editimpact_core::corpus::Language;
use editimpact_core::merge::{
    build_graph, connected_components, default_displacy_labels, displacy_merge, EditGroup,
    MergeConfig,
};
use proptest::prelude::*;

use common::fixtures::{instance, random_tree, HashedPairs};
use common::{is_partition, random_edges, rng, union_find_groups};

#[test]
fn components_match_union_find_oracle() {
    let mut r = rng(9);
    for _ in 0..1000 {
        let n = rand::Rng::gen_range(&mut r, 0..=50);
        let edges = random_edges(&mut r, n);
        let got: Vec<Vec<usize>> = connected_components(n, &edges)
            .into_iter()
            .map(|g| g.members)
            .collect();
        assert_eq!(got, union_find_groups(n, &edges));
    }
}

/// Every cell of `fine` lies inside one cell of `coarse`.
fn refines(fine: &[EditGroup], coarse: &[EditGroup]) -> bool {
    fine.iter().all(|f| {
        coarse
            .iter()
            .any(|c| f.members.iter().all(|m| c.members.contains(m)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn learned_and_displacy_groups_partition_the_edits(seed in any::<u64>(), use_tree in any::<bool>()) {
        let mut r = rng(seed);
        let (pair, set) = instance(&mut r, 0);
        let tree = if use_tree { random_tree(&mut r, pair.target.len()) } else { None };
        let graph = build_graph(&set, Language::En, &HashedPairs, &MergeConfig::default(), tree.as_ref()).unwrap();
        let groups = graph.components();
        prop_assert!(is_partition(&groups, set.len()));
        prop_assert!(groups.len() <= set.len());
        if graph.edges.is_empty() {
            prop_assert_eq!(groups.len(), set.len());
        }
        if let Some(t) = &tree {
            let d = displacy_merge(&set, t, &default_displacy_labels()).unwrap();
            prop_assert!(is_partition(&d, set.len()));
        }
    }

    #[test]
    fn looser_thresholds_only_coarsen(
        seed in any::<u64>(),
        tau in 0.05f64..0.95,
        dtau in 0.0f64..0.5,
        ds in 0usize..10,
        dds in 0usize..5,
        dd in 0usize..4,
        ddd in 0usize..3,
    ) {
        let mut r = rng(seed);
        let (pair, set) = instance(&mut r, 2);
        let tree = random_tree(&mut r, pair.target.len());
        let strict = MergeConfig { tau, delta_seq: ds, delta_dep: dd };
        let loose = MergeConfig { tau: (tau - dtau).max(0.01), delta_seq: ds + dds, delta_dep: dd + ddd };
        let g = |c: &MergeConfig| {
            build_graph(&set, Language::En, &HashedPairs, c, tree.as_ref()).unwrap().components()
        };
        prop_assert!(refines(&g(&strict), &g(&loose)));
    }

    #[test]
    fn component_count_bounds(n in 0usize..30, edges in prop::collection::vec((0usize..30, 0usize..30), 0..40)) {
        let edges: Vec<_> = edges.into_iter().filter(|&(a, b)| a < n && b < n && a != b).collect();
        let groups = connected_components(n, &edges);
        prop_assert!(is_partition(&groups, n));
        prop_assert!(groups.len() <= n);
        prop_assert!(groups.len() + edges.len() >= n);
    }
}
