//! Per-sentence edit association graphs and the groups they induce.
//!
//! Distances are measured on the target side. An edit with an empty target
//! span (a deletion) is anchored at its target start position.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::assoc::PairScorer;
use crate::corpus::{DependencyTree, Language};
use crate::edits::{Edit, EditSet};
use crate::error::{Error, Result};
use crate::mining::{Item, MinedAssociations};

pub const NO_TREE_WARNING: &str = "no dependency parse; dependency constraint skipped";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub tau: f64,
    pub delta_seq: usize,
    pub delta_dep: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            tau: 0.60,
            delta_seq: 8,
            delta_dep: 2,
        }
    }
}

impl MergeConfig {
    pub fn for_language(language: Language) -> Self {
        match language {
            Language::De => MergeConfig {
                tau: 0.75,
                delta_seq: 12,
                delta_dep: 2,
            },
            _ => MergeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!(
                "merge tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

pub fn default_displacy_labels() -> BTreeSet<String> {
    ["aux", "cop", "prt", "compound:prt", "case", "mark", "det"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Sorted, non-empty set of edit indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EditGroup {
    pub members: Vec<usize>,
}

impl EditGroup {
    pub fn singleton(i: usize) -> Self {
        EditGroup { members: vec![i] }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn first(&self) -> usize {
        self.members[0]
    }
}

pub fn singletons(k: usize) -> Vec<EditGroup> {
    (0..k).map(EditGroup::singleton).collect()
}

/// Gap in target positions between the nearest span boundaries; zero for
/// adjacent or overlapping spans.
pub fn seq_distance(a: &Edit, b: &Edit) -> usize {
    let (s1, e1) = (a.tgt_span.start, a.tgt_span.end.max(a.tgt_span.start));
    let (s2, e2) = (b.tgt_span.start, b.tgt_span.end.max(b.tgt_span.start));
    s1.max(s2).saturating_sub(e1.min(e2))
}

/// Target token positions an edit occupies in `tree`.
fn anchor_tokens(edit: &Edit, tree: &DependencyTree) -> Result<Vec<usize>> {
    let n = tree.len();
    if edit.tgt_span.is_empty() {
        return Ok(vec![edit.tgt_span.start.min(n.saturating_sub(1))]);
    }
    if edit.tgt_span.end > n {
        return Err(Error::InvalidInput(format!(
            "edit target span [{}, {}) lies outside a {n}-token tree",
            edit.tgt_span.start, edit.tgt_span.end
        )));
    }
    Ok((edit.tgt_span.start..edit.tgt_span.end).collect())
}

/// Fewest undirected tree hops between any token of `a` and any token of `b`.
pub fn dep_distance(a: &Edit, b: &Edit, tree: &DependencyTree) -> Result<usize> {
    let from = anchor_tokens(a, tree)?;
    let to = anchor_tokens(b, tree)?;
    let dist = tree.distances_from(&from);
    to.iter()
        .filter_map(|&t| dist[t])
        .min()
        .ok_or_else(|| Error::InvalidInput("edits lie in disconnected tree parts".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditGraph {
    pub k: usize,
    /// `(i, j, r)` with `i < j`, in lexicographic order.
    pub edges: Vec<(usize, usize, f64)>,
    pub warnings: Vec<String>,
}

impl EditGraph {
    pub fn edgeless(k: usize) -> Self {
        EditGraph {
            k,
            edges: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn components(&self) -> Vec<EditGroup> {
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        connected_components(self.k, &pairs)
    }
}

/// Adds an edge for every edit pair within both distance limits whose
/// association probability exceeds `tau`. The scorer is only consulted for
/// pairs that pass the distance limits.
pub fn build_graph(
    set: &EditSet,
    language: Language,
    scorer: &dyn PairScorer,
    config: &MergeConfig,
    tree: Option<&DependencyTree>,
) -> Result<EditGraph> {
    config.validate()?;
    let k = set.len();
    let mut graph = EditGraph::edgeless(k);
    if tree.is_none() && k > 1 {
        graph.warnings.push(NO_TREE_WARNING.to_string());
    }
    let items: Vec<Item> = set.iter().map(|e| Item::from_edit(e, language)).collect();
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (&set.edits[i], &set.edits[j]);
            if seq_distance(a, b) > config.delta_seq {
                continue;
            }
            if let Some(t) = tree {
                if dep_distance(a, b, t)? > config.delta_dep {
                    continue;
                }
            }
            let r = scorer.probability(items[i].as_str(), items[j].as_str())?;
            if r > config.tau {
                graph.edges.push((i, j, r));
            }
        }
    }
    Ok(graph)
}

/// Components over `0..k`, each sorted, ordered by smallest member.
pub fn connected_components(k: usize, edges: &[(usize, usize)]) -> Vec<EditGroup> {
    let mut adj = vec![Vec::new(); k];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; k];
    let mut groups = Vec::new();
    for start in 0..k {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        members.sort_unstable();
        groups.push(EditGroup { members });
    }
    groups
}

/// Dependency-parse baseline: two edits merge when a token of one is the
/// direct head of a token of the other and the dependent's relation is in
/// `labels`.
pub fn displacy_merge(
    set: &EditSet,
    tree: &DependencyTree,
    labels: &BTreeSet<String>,
) -> Result<Vec<EditGroup>> {
    let tokens: Vec<Vec<usize>> = set
        .iter()
        .map(|e| anchor_tokens(e, tree))
        .collect::<Result<_>>()?;
    let linked = |heads: &[usize], deps: &[usize]| {
        deps.iter().any(|&d| {
            let h = tree.heads[d];
            h > 0 && heads.contains(&(h - 1)) && labels.contains(&tree.relations[d])
        })
    };
    let mut edges = Vec::new();
    for i in 0..tokens.len() {
        for j in i + 1..tokens.len() {
            if linked(&tokens[i], &tokens[j]) || linked(&tokens[j], &tokens[i]) {
                edges.push((i, j));
            }
        }
    }
    Ok(connected_components(set.len(), &edges))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub id: String,
    pub groups: Vec<EditGroup>,
    pub warnings: Vec<String>,
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// DOT rendering of one sentence graph; nodes carry edit labels, edges `r`.
pub fn graph_to_dot(name: &str, set: &EditSet, graph: &EditGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "graph \"{}\" {{", dot_escape(name));
    for (i, e) in set.iter().enumerate() {
        let _ = writeln!(out, "  e{i} [label=\"{}\"];", dot_escape(&e.label()));
    }
    for &(i, j, r) in &graph.edges {
        let _ = writeln!(out, "  e{i} -- e{j} [label=\"{r:.3}\"];");
    }
    out.push_str("}\n");
    out
}

/// DOT rendering of the `top_n` mined pairs (by Jaccard), edges labeled with
/// their association score from `scorer` when given, else their Jaccard.
pub fn associations_to_dot(
    mined: &MinedAssociations,
    top_n: usize,
    scorer: Option<&dyn PairScorer>,
) -> Result<String> {
    let pairs = &mined.pairs[..top_n.min(mined.pairs.len())];
    let nodes: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.item_a.as_str(), p.item_b.as_str()])
        .collect();
    let mut out = String::from("graph associations {\n");
    for n in &nodes {
        let _ = writeln!(out, "  \"{0}\" [label=\"{0}\"];", dot_escape(n));
    }
    for p in pairs {
        let w = match scorer {
            Some(s) => s.probability(&p.item_a, &p.item_b)?,
            None => p.stats.jaccard,
        };
        let _ = writeln!(
            out,
            "  \"{}\" -- \"{}\" [label=\"{w:.3}\"];",
            dot_escape(&p.item_a),
            dot_escape(&p.item_b)
        );
    }
    out.push_str("}\n");
    Ok(out)
}

/// Groups for one sentence under the learned graph, warning once when the
/// parse is missing.
pub fn merge_sentence(
    id: &str,
    set: &EditSet,
    language: Language,
    scorer: &dyn PairScorer,
    config: &MergeConfig,
    tree: Option<&DependencyTree>,
) -> Result<MergeRecord> {
    let graph = build_graph(set, language, scorer, config, tree)?;
    for w in &graph.warnings {
        debug!("{id}: {w}");
    }
    Ok(MergeRecord {
        id: id.to_string(),
        groups: graph.components(),
        warnings: graph.warnings,
    })
}
