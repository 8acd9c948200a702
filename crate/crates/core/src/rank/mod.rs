//! Ranking edit groups by their marginal effect on sentence disfluency.
//!
//! `rank_ours` is a forward greedy search: starting from the source, each
//! step applies the remaining group whose application lowers disfluency the
//! most. `rank_vanilla` scores every edit once by leaving it out of the full
//! correction.

pub mod ngram;
pub mod scorer;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::ngram::NGramLM;
pub use self::scorer::{Affine, ConstantScorer, Disfluency, Negated, StubScorer};
use crate::corpus::Sentence;
use crate::edits::{apply_edits, Edit, EditSet};
use crate::error::{Error, Result};
use crate::merge::{singletons, EditGroup};
use crate::seeds::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranker {
    Ours,
    Vanilla,
    Greedy,
    Displacy,
    Random,
}

impl Ranker {
    pub const ALL: [Ranker; 5] = [
        Ranker::Ours,
        Ranker::Vanilla,
        Ranker::Greedy,
        Ranker::Displacy,
        Ranker::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ranker::Ours => "ours",
            Ranker::Vanilla => "vanilla",
            Ranker::Greedy => "greedy",
            Ranker::Displacy => "displacy",
            Ranker::Random => "random",
        }
    }
}

impl fmt::Display for Ranker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ranker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ranker::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown ranker {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub members: Vec<usize>,
    /// Disfluency reduction credited to the group; absent for the random
    /// ranker.
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedOutput {
    pub groups: Vec<RankedGroup>,
    /// Rank position of each edit; members of one group share a position.
    pub edit_rank: Vec<usize>,
}

impl RankedOutput {
    fn from_groups(groups: Vec<RankedGroup>, k: usize) -> Self {
        let mut edit_rank = vec![usize::MAX; k];
        for (pos, g) in groups.iter().enumerate() {
            for &m in &g.members {
                edit_rank[m] = pos;
            }
        }
        debug_assert!(edit_rank.iter().all(|&r| r != usize::MAX));
        RankedOutput { groups, edit_rank }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Edit indices in rank order; ties within a group by edit index.
    pub fn edit_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.edit_rank.len()).collect();
        order.sort_by_key(|&i| (self.edit_rank[i], i));
        order
    }
}

/// One JSON Lines record of ranked output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub id: String,
    pub ranker: Ranker,
    pub groups: Vec<RankedGroup>,
    pub edit_rank: Vec<usize>,
    pub curve: Vec<f64>,
}

fn check_partition(groups: &[EditGroup], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidInput("empty edit group".into()));
        }
        for &m in &g.members {
            if m >= k || seen[m] {
                return Err(Error::InvalidInput(format!(
                    "groups do not partition {k} edits (index {m})"
                )));
            }
            seen[m] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "groups do not cover all {k} edits"
        )));
    }
    Ok(())
}

/// Scorer value, rejecting non-finite output.
fn score(scorer: &dyn Disfluency, sentence: &Sentence) -> Result<f64> {
    let v = scorer.disfluency(sentence)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Backend(format!(
            "scorer {} returned {v} for {:?}",
            scorer.id(),
            sentence.text()
        )))
    }
}

fn apply_indices(source: &Sentence, set: &EditSet, indices: &BTreeSet<usize>) -> Result<Sentence> {
    let edits: Vec<Edit> = indices.iter().map(|&i| set.edits[i].clone()).collect();
    apply_edits(source, &edits)
}

/// `disfluency(source with set \ g applied) - disfluency(target)`.
pub fn delta_leave_one_out(
    scorer: &dyn Disfluency,
    source: &Sentence,
    set: &EditSet,
    group: &EditGroup,
) -> Result<f64> {
    let all: BTreeSet<usize> = (0..set.len()).collect();
    let rest: BTreeSet<usize> = all
        .iter()
        .copied()
        .filter(|i| !group.members.contains(i))
        .collect();
    if group.members.iter().any(|&m| m >= set.len()) {
        return Err(Error::InvalidInput(
            "group member outside the edit set".into(),
        ));
    }
    let full = score(scorer, &apply_indices(source, set, &all)?)?;
    let without = score(scorer, &apply_indices(source, set, &rest)?)?;
    Ok(without - full)
}

fn group_position(set: &EditSet, g: &EditGroup) -> (usize, usize) {
    g.members
        .iter()
        .map(|&m| (set.edits[m].src_span.start, set.edits[m].tgt_span.start))
        .min()
        .unwrap_or((usize::MAX, usize::MAX))
}

/// Greater Δ first; then earliest source position, fewest members, input
/// order.
fn better(set: &EditSet, groups: &[EditGroup], a: (usize, f64), b: (usize, f64)) -> bool {
    match a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    let ka = (group_position(set, &groups[a.0]), groups[a.0].len(), a.0);
    let kb = (group_position(set, &groups[b.0]), groups[b.0].len(), b.0);
    ka < kb
}

/// Per-step candidate deltas, for inspection.
pub type GreedyTrace = Vec<Vec<(usize, f64)>>;

pub fn rank_ours(
    scorer: &dyn Disfluency,
    source: &Sentence,
    set: &EditSet,
    groups: &[EditGroup],
) -> Result<RankedOutput> {
    rank_ours_traced(scorer, source, set, groups).map(|(out, _)| out)
}

pub fn rank_ours_traced(
    scorer: &dyn Disfluency,
    source: &Sentence,
    set: &EditSet,
    groups: &[EditGroup],
) -> Result<(RankedOutput, GreedyTrace)> {
    set.validate()?;
    check_partition(groups, set.len())?;
    let mut applied: BTreeSet<usize> = BTreeSet::new();
    let mut remaining: Vec<usize> = (0..groups.len()).collect();
    let mut current = score(scorer, source)?;
    let mut ordered = Vec::with_capacity(groups.len());
    let mut trace = Vec::with_capacity(groups.len());

    while !remaining.is_empty() {
        let scored: Vec<(usize, f64, f64)> = remaining
            .par_iter()
            .map(|&g| {
                let mut next = applied.clone();
                next.extend(groups[g].members.iter().copied());
                let d = score(scorer, &apply_indices(source, set, &next)?)?;
                Ok((g, current - d, d))
            })
            .collect::<Result<_>>()?;
        let mut best = 0;
        for c in 1..scored.len() {
            if better(
                set,
                groups,
                (scored[c].0, scored[c].1),
                (scored[best].0, scored[best].1),
            ) {
                best = c;
            }
        }
        let (g, delta, d) = scored[best];
        trace.push(scored.iter().map(|&(g, delta, _)| (g, delta)).collect());
        applied.extend(groups[g].members.iter().copied());
        current = d;
        remaining.retain(|&x| x != g);
        ordered.push(RankedGroup {
            members: groups[g].members.clone(),
            delta: Some(delta),
        });
    }
    Ok((RankedOutput::from_groups(ordered, set.len()), trace))
}

pub fn rank_greedy(
    scorer: &dyn Disfluency,
    source: &Sentence,
    set: &EditSet,
) -> Result<RankedOutput> {
    rank_ours(scorer, source, set, &singletons(set.len()))
}

pub fn rank_vanilla(
    scorer: &dyn Disfluency,
    source: &Sentence,
    set: &EditSet,
) -> Result<RankedOutput> {
    set.validate()?;
    let groups = singletons(set.len());
    let deltas: Vec<f64> = groups
        .par_iter()
        .map(|g| delta_leave_one_out(scorer, source, set, g))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        if better(set, &groups, (a, deltas[a]), (b, deltas[b])) {
            Ordering::Less
        } else if better(set, &groups, (b, deltas[b]), (a, deltas[a])) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
    let ordered = order
        .into_iter()
        .map(|i| RankedGroup {
            members: vec![i],
            delta: Some(deltas[i]),
        })
        .collect();
    Ok(RankedOutput::from_groups(ordered, set.len()))
}

/// Uniform permutation of the atomic edits.
pub fn rank_random(set: &EditSet, seed: u64) -> RankedOutput {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut substream(seed, "random-ranker"));
    let ordered = order
        .into_iter()
        .map(|i| RankedGroup {
            members: vec![i],
            delta: None,
        })
        .collect();
    RankedOutput::from_groups(ordered, set.len())
}

/// Disfluency after applying each successive group; index 0 is the source.
pub fn fluency_curve(
    scorer: &dyn Disfluency,
    source: &Sentence,
    set: &EditSet,
    ranked: &RankedOutput,
) -> Result<Vec<f64>> {
    let mut applied = BTreeSet::new();
    let mut curve = vec![score(scorer, source)?];
    for g in &ranked.groups {
        applied.extend(g.members.iter().copied());
        curve.push(score(scorer, &apply_indices(source, set, &applied)?)?);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Language};
    use crate::edits::extract_edits;

    fn en(t: &str) -> Sentence {
        tokenize(t, Language::En)
    }

    fn table7() -> (Sentence, EditSet, StubScorer) {
        let src = en("I have finish my task .");
        let tgt = en("I have finished my homework .");
        let set = extract_edits(&src, &tgt);
        let stub = StubScorer::new()
            .with("I have finish my task .", Language::En, 1391.3)
            .with("I have finish my homework .", Language::En, 1165.1)
            .with("I have finished my task .", Language::En, 224.9)
            .with("I have finished my homework .", Language::En, 180.5);
        (src, set, stub)
    }

    #[test]
    fn table7_ranking() {
        let (src, set, stub) = table7();
        assert_eq!(set.len(), 2);
        let out = rank_ours(&stub, &src, &set, &singletons(2)).unwrap();
        assert_eq!(out.groups[0].members, vec![0]);
        assert_eq!(out.groups[1].members, vec![1]);
        assert!((out.groups[0].delta.unwrap() - 1166.4).abs() < 1e-9);
        assert_eq!(out.edit_rank, vec![0, 1]);
        let curve = fluency_curve(&stub, &src, &set, &out).unwrap();
        assert_eq!(curve, vec![1391.3, 224.9, 180.5]);

        let d = delta_leave_one_out(&stub, &src, &set, &EditGroup::singleton(0)).unwrap();
        assert!((d - 984.6).abs() < 1e-9);
    }

    #[test]
    fn single_group_delta_is_source_minus_target() {
        let (src, set, stub) = table7();
        let g = vec![EditGroup {
            members: vec![0, 1],
        }];
        let out = rank_ours(&stub, &src, &set, &g).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.groups[0].delta.unwrap(), 1391.3 - 180.5);
        assert_eq!(out.edit_rank, vec![0, 0]);
    }

    #[test]
    fn constant_scorer_ties_follow_position() {
        let src = en("a b c d e");
        let set = extract_edits(&src, &en("x b y d z"));
        assert_eq!(set.len(), 3);
        let out = rank_vanilla(&ConstantScorer(5.0), &src, &set).unwrap();
        assert_eq!(out.edit_order(), vec![0, 1, 2]);
        assert!(out.groups.iter().all(|g| g.delta == Some(0.0)));
        let out = rank_greedy(&ConstantScorer(5.0), &src, &set).unwrap();
        assert_eq!(out.edit_order(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_and_identity() {
        let src = en("same");
        let set = extract_edits(&src, &src);
        let stub = StubScorer::new().with("same", Language::En, 3.0);
        assert!(rank_greedy(&stub, &src, &set).unwrap().is_empty());
        let out = RankedOutput::default();
        assert_eq!(fluency_curve(&stub, &src, &set, &out).unwrap(), vec![3.0]);
        let d = delta_leave_one_out(&stub, &src, &set, &EditGroup { members: vec![] }).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn random_is_seeded_permutation() {
        let src = en("a b c d e f");
        let set = extract_edits(&src, &en("A b C d E f G"));
        let a = rank_random(&set, 7);
        assert_eq!(a, rank_random(&set, 7));
        let mut order = a.edit_order();
        order.sort_unstable();
        assert_eq!(order, (0..set.len()).collect::<Vec<_>>());
        assert!(a.groups.iter().all(|g| g.delta.is_none()));
    }

    #[test]
    fn rejects_non_partition() {
        let (src, set, stub) = table7();
        let bad = vec![EditGroup::singleton(0)];
        assert!(rank_ours(&stub, &src, &set, &bad).is_err());
        let bad = vec![
            EditGroup::singleton(0),
            EditGroup {
                members: vec![0, 1],
            },
        ];
        assert!(rank_ours(&stub, &src, &set, &bad).is_err());
    }

    #[test]
    fn ranker_names_round_trip() {
        for r in Ranker::ALL {
            assert_eq!(r.as_str().parse::<Ranker>().unwrap(), r);
        }
        assert!("best".parse::<Ranker>().is_err());
    }
}
