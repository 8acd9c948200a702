//! Random instances for merge and rank properties.

use editimpact_core::assoc::PairScorer;
use editimpact_core::corpus::{DependencyTree, Language, Sentence, SentencePair};
use editimpact_core::edits::{extract_edits, EditSet};
use editimpact_core::merge::{default_displacy_labels, displacy_merge, singletons, EditGroup};
use editimpact_core::rank::{
    rank_greedy, rank_ours, rank_random, rank_vanilla, Disfluency, RankedOutput,
};
use editimpact_core::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::mutated_pair;

/// Random tree with token 1 as root and every later token attached to an
/// earlier one.
pub fn random_tree(r: &mut ChaCha8Rng, n: usize) -> Option<DependencyTree> {
    if n == 0 {
        return None;
    }
    let heads: Vec<usize> = (0..n)
        .map(|i| if i == 0 { 0 } else { r.gen_range(1..=i) })
        .collect();
    let rels = (0..n)
        .map(|i| {
            if i == 0 {
                "root"
            } else {
                ["amod", "nsubj", "prt", "det"][i % 4]
            }
            .to_string()
        })
        .collect();
    Some(DependencyTree::new(heads, rels, "rand").unwrap())
}

/// Pseudo-random but symmetric association score from the item keys.
pub struct HashedPairs;

impl PairScorer for HashedPairs {
    fn probability(&self, a: &str, b: &str) -> Result<f64> {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        let mut h: u64 = 1469598103934665603;
        for byte in x.bytes().chain([0]).chain(y.bytes()) {
            h ^= byte as u64;
            h = h.wrapping_mul(1099511628211);
        }
        Ok((h % 10_000) as f64 / 10_000.0)
    }
}

/// A mutated English pair with at least `min_edits` edits.
pub fn instance(r: &mut ChaCha8Rng, min_edits: usize) -> (SentencePair, EditSet) {
    loop {
        let pair = mutated_pair(r, 0, Language::En);
        let set = extract_edits(&pair.source, &pair.target);
        if set.len() >= min_edits {
            return (pair, set);
        }
    }
}

/// Group order and edit ranks from every ranker: ours over `groups`,
/// vanilla, greedy, displacy over `tree` (singletons without one) and
/// random with a fixed seed.
pub fn all_rankings(
    scorer: &dyn Disfluency,
    source: &Sentence,
    set: &EditSet,
    groups: &[EditGroup],
    tree: Option<&DependencyTree>,
) -> Vec<(Vec<Vec<usize>>, Vec<usize>)> {
    let shape = |o: RankedOutput| {
        (
            o.groups.iter().map(|g| g.members.clone()).collect(),
            o.edit_rank,
        )
    };
    let displacy = match tree {
        Some(t) => displacy_merge(set, t, &default_displacy_labels()).unwrap(),
        None => singletons(set.len()),
    };
    vec![
        shape(rank_ours(scorer, source, set, groups).unwrap()),
        shape(rank_vanilla(scorer, source, set).unwrap()),
        shape(rank_greedy(scorer, source, set).unwrap()),
        shape(rank_ours(scorer, source, set, &displacy).unwrap()),
        shape(rank_random(set, 3)),
    ]
}
