mod common;

use editimpact_core::corpus::{tokenize, Language, Sentence};
use editimpact_core::rank::{rank_greedy, rank_ours, rank_random, rank_vanilla, Affine, NGramLM};
use proptest::prelude::*;

use common::fixtures::{all_rankings, instance, random_tree};
use common::{random_partition, rng, HashScorer};

#[test]
fn positive_affine_maps_preserve_every_ranking() {
    let mut r = rng(21);
    for _ in 0..100 {
        let (pair, set) = instance(&mut r, 1);
        let groups = random_partition(&mut r, set.len());
        let tree = random_tree(&mut r, pair.target.len());
        let base = all_rankings(&HashScorer, &pair.source, &set, &groups, tree.as_ref());
        for scale in [0.5, 2.0, 10.0] {
            for offset in [-5.0, 0.0, 7.0] {
                let mapped = Affine {
                    inner: HashScorer,
                    scale,
                    offset,
                };
                assert_eq!(
                    all_rankings(&mapped, &pair.source, &set, &groups, tree.as_ref()),
                    base,
                    "a={scale} b={offset}"
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn rankers_output_permutations_with_shared_group_ranks(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (pair, set) = instance(&mut r, 0);
        let groups = random_partition(&mut r, set.len());
        let ours = rank_ours(&HashScorer, &pair.source, &set, &groups).unwrap();
        let mut seen: Vec<usize> = ours.groups.iter().flat_map(|g| g.members.clone()).collect();
        seen.sort();
        prop_assert_eq!(seen, (0..set.len()).collect::<Vec<_>>());
        prop_assert_eq!(ours.groups.len(), groups.len());
        for (pos, g) in ours.groups.iter().enumerate() {
            for &m in &g.members {
                prop_assert_eq!(ours.edit_rank[m], pos);
            }
        }
        for out in [
            rank_vanilla(&HashScorer, &pair.source, &set).unwrap(),
            rank_greedy(&HashScorer, &pair.source, &set).unwrap(),
            rank_random(&set, seed),
        ] {
            let mut ranks = out.edit_rank.clone();
            ranks.sort();
            prop_assert_eq!(ranks, (0..set.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn ngram_context_distributions_sum_to_one(
        corpus in prop::collection::vec("[abc]( [abc]){0,6}", 1..8),
        context in prop::collection::vec("[abcd]", 0..3),
        order in 1usize..4,
        k in 0.01f64..2.0,
    ) {
        let sentences: Vec<Sentence> = corpus.iter().map(|s| tokenize(s, Language::En)).collect();
        let lm = NGramLM::train(&sentences, order, k).unwrap();
        let ctx: Vec<String> = context.into_iter().rev().take(order - 1).collect();
        let total: f64 = lm.vocab().map(|w| lm.prob(&ctx, w)).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "{}", total);
    }
}
