//! Pairwise edit association mining over per-sentence edit transactions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Language, SentencePair};
use crate::edits::{extract_edits, Edit, EditOp, EditSet};
use crate::error::{Error, Result};

/// Canonical key of an edit: an operation marker followed by the normalized
/// correction-side text (source-side text for deletions).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Item(pub String);

impl Item {
    pub fn from_edit(edit: &Edit, language: Language) -> Item {
        let (marker, text) = match edit.op {
            EditOp::Insert => ('+', &edit.tgt_text),
            EditOp::Delete => ('-', &edit.src_text),
            EditOp::Substitute => ('~', &edit.tgt_text),
        };
        Item(format!("{marker}{}", normalize(text, language)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Key text without the operation marker.
    pub fn text(&self) -> &str {
        let mut chars = self.0.chars();
        match chars.next() {
            Some('+' | '-' | '~') => chars.as_str(),
            _ => &self.0,
        }
    }
}

pub fn normalize(text: &str, language: Language) -> String {
    if language.is_latin() {
        text.to_lowercase()
    } else {
        text.to_string()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transaction {
    pub items: BTreeSet<String>,
}

impl Transaction {
    pub fn from_edits(set: &EditSet, language: Language) -> Self {
        Transaction {
            items: set.iter().map(|e| Item::from_edit(e, language).0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Transaction {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Transaction {
            items: iter.into_iter().map(Into::into).collect(),
        }
    }
}

/// One transaction per pair; identical pairs give empty transactions, which
/// still count towards the corpus size.
pub fn build_transactions(pairs: &[SentencePair]) -> Vec<Transaction> {
    pairs
        .iter()
        .map(|p| Transaction::from_edits(&extract_edits(&p.source, &p.target), p.language))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub min_item_freq: usize,
    pub min_cooccurrence: usize,
    pub min_confidence: f64,
    pub min_lift: f64,
    pub min_pair_jaccard: f64,
    pub word_jaccard_filter: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            min_item_freq: 5,
            min_cooccurrence: 2,
            min_confidence: 0.1,
            min_lift: 1.1,
            min_pair_jaccard: 0.01,
            word_jaccard_filter: 0.6,
        }
    }
}

impl MiningConfig {
    pub fn for_language(language: Language) -> Self {
        let mut cfg = MiningConfig::default();
        if language == Language::Es {
            cfg.min_item_freq = 3;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.min_item_freq > 0
            && self.min_cooccurrence > 0
            && self.min_confidence > 0.0
            && self.min_lift > 0.0
            && self.min_pair_jaccard > 0.0
            && self.word_jaccard_filter > 0.0;
        if positive {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "mining thresholds must be positive: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub co_count: usize,
    pub count_a: usize,
    pub count_b: usize,
    pub jaccard: f64,
    pub confidence: f64,
    pub lift: f64,
}

impl PairStats {
    pub fn compute(co_count: usize, count_a: usize, count_b: usize, n_transactions: usize) -> Self {
        let co = co_count as f64;
        let (a, b) = (count_a as f64, count_b as f64);
        PairStats {
            co_count,
            count_a,
            count_b,
            jaccard: co / (a + b - co),
            confidence: (co / a).max(co / b),
            lift: co * n_transactions as f64 / (a * b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub item_a: String,
    pub item_b: String,
    #[serde(flatten)]
    pub stats: PairStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedAssociations {
    /// Accepted pairs, sorted by Jaccard descending then by key.
    pub pairs: Vec<Association>,
    /// Counts of the items that passed the frequency cutoff.
    pub frequent_items: BTreeMap<String, usize>,
    pub n_transactions: usize,
}

impl MinedAssociations {
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for a in &self.pairs {
            serde_json::to_writer(&mut out, a)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Character-bigram Jaccard similarity of two strings. Strings shorter than two
/// characters contribute themselves as their only gram.
pub fn bigram_jaccard(a: &str, b: &str) -> f64 {
    fn grams(s: &str) -> BTreeSet<String> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() < 2 {
            return std::iter::once(s.to_string()).collect();
        }
        chars.windows(2).map(|w| w.iter().collect()).collect()
    }
    let (x, y) = (grams(a), grams(b));
    let inter = x.intersection(&y).count();
    let union = x.union(&y).count();
    inter as f64 / union as f64
}

pub fn key_similarity(a: &str, b: &str) -> f64 {
    bigram_jaccard(Item(a.to_string()).text(), Item(b.to_string()).text())
}

pub fn passes(stats: &PairStats, item_a: &str, item_b: &str, cfg: &MiningConfig) -> bool {
    stats.co_count >= cfg.min_cooccurrence
        && stats.jaccard > cfg.min_pair_jaccard
        && stats.confidence > cfg.min_confidence
        && stats.lift > cfg.min_lift
        && key_similarity(item_a, item_b) < cfg.word_jaccard_filter
}

/// Mines accepted item pairs: frequent items form candidate pairs, which are
/// kept when they clear the co-occurrence, Jaccard, confidence, lift and
/// similarity thresholds.
pub fn mine_pairs(transactions: &[Transaction], cfg: &MiningConfig) -> Result<MinedAssociations> {
    if transactions.is_empty() {
        return Err(Error::InvalidInput("no transactions to mine".into()));
    }
    cfg.validate()?;
    let n = transactions.len();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in transactions {
        for item in &t.items {
            *counts.entry(item.as_str()).or_default() += 1;
        }
    }
    let frequent: BTreeMap<&str, usize> = counts
        .into_iter()
        .filter(|&(_, c)| c >= cfg.min_item_freq)
        .collect();
    let index: HashMap<&str, usize> = frequent.keys().enumerate().map(|(i, &k)| (k, i)).collect();
    let keys: Vec<&str> = frequent.keys().copied().collect();

    let mut co: HashMap<(usize, usize), usize> = HashMap::new();
    for t in transactions {
        let present: Vec<usize> = t
            .items
            .iter()
            .filter_map(|i| index.get(i.as_str()).copied())
            .collect();
        for (x, &i) in present.iter().enumerate() {
            for &j in &present[x + 1..] {
                let key = if i < j { (i, j) } else { (j, i) };
                *co.entry(key).or_default() += 1;
            }
        }
    }

    let mut pairs: Vec<Association> = co
        .into_iter()
        .filter(|&(_, c)| c >= cfg.min_cooccurrence)
        .filter_map(|((i, j), c)| {
            let (a, b) = (keys[i], keys[j]);
            let stats = PairStats::compute(c, frequent[a], frequent[b], n);
            passes(&stats, a, b, cfg).then(|| Association {
                item_a: a.to_string(),
                item_b: b.to_string(),
                stats,
            })
        })
        .collect();
    pairs.sort_by(|x, y| {
        y.stats
            .jaccard
            .total_cmp(&x.stats.jaccard)
            .then_with(|| x.item_a.cmp(&y.item_a))
            .then_with(|| x.item_b.cmp(&y.item_b))
    });

    Ok(MinedAssociations {
        pairs,
        frequent_items: frequent
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        n_transactions: n,
    })
}
