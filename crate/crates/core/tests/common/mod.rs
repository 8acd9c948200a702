//! Independent oracles and generators shared by the property and
//! acceptance tests.
#![allow(dead_code)]

pub mod fixtures;

use std::collections::{BTreeMap, BTreeSet};

use editimpact_core::assoc::mlp::{batch_loss_and_grad, Layout, Masks};
use editimpact_core::assoc::{train, LabeledPair, PairLabel, TrainConfig};
use editimpact_core::corpus::{Language, Sentence, SentencePair};
use editimpact_core::edits::{apply_edits, extract_edits};
use editimpact_core::embed::{EmbeddingProvider, HashProvider, Vector};
use editimpact_core::merge::EditGroup;
use editimpact_core::mining::{MiningConfig, PairStats, Transaction};
use editimpact_core::rank::Disfluency;
use editimpact_core::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- metrics

/// Direct evaluation over labels in rank order (`true` = Cor).
pub fn brute_s_bound(labels: &[bool]) -> f64 {
    let k = labels.len();
    let n_cor = labels.iter().filter(|&&c| c).count();
    let mut mu = 0;
    for (pos, &cor) in labels.iter().enumerate() {
        let predicted_cor = pos < n_cor;
        if predicted_cor && !cor {
            mu += 1;
        }
        if !predicted_cor && cor {
            mu += 1;
        }
    }
    1.0 - mu as f64 / k as f64
}

pub fn brute_s_rank(labels: &[bool], epsilon: f64) -> f64 {
    let n_cor = labels.iter().filter(|&&c| c).count();
    let n_rea = labels.len() - n_cor;
    let mut sigma = 0usize;
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if !labels[i] && labels[j] {
                sigma += 1;
            }
        }
    }
    1.0 - sigma as f64 / ((n_cor * n_rea) as f64 + epsilon)
}

// ---------------------------------------------------------------- mining

pub fn random_transactions(r: &mut ChaCha8Rng) -> Vec<Transaction> {
    let n_items = r.gen_range(1..=10);
    let n = r.gen_range(1..=50);
    (0..n)
        .map(|_| {
            let len = r.gen_range(0..=n_items.min(5));
            (0..len)
                .map(|_| format!("~w{}", r.gen_range(0..n_items)))
                .collect()
        })
        .collect()
}

fn bigrams(s: &str) -> BTreeSet<String> {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() < 2 {
        return [s.to_string()].into_iter().collect();
    }
    chars.windows(2).map(|w| w.iter().collect()).collect()
}

fn strip(item: &str) -> &str {
    item.strip_prefix(['~', '+', '-']).unwrap_or(item)
}

/// Exhaustive double loop over every item pair.
pub fn mining_oracle(
    ts: &[Transaction],
    cfg: &MiningConfig,
) -> BTreeMap<(String, String), PairStats> {
    let n = ts.len();
    let all: BTreeSet<&String> = ts.iter().flat_map(|t| t.items.iter()).collect();
    let count = |i: &String| ts.iter().filter(|t| t.items.contains(i)).count();
    let mut out = BTreeMap::new();
    for a in &all {
        for b in &all {
            if a >= b {
                continue;
            }
            let (ca, cb) = (count(a), count(b));
            if ca < cfg.min_item_freq || cb < cfg.min_item_freq {
                continue;
            }
            let co = ts
                .iter()
                .filter(|t| t.items.contains(*a) && t.items.contains(*b))
                .count();
            if co == 0 {
                continue;
            }
            let (cof, af, bf) = (co as f64, ca as f64, cb as f64);
            let jaccard = cof / (af + bf - cof);
            let confidence = (cof / af).max(cof / bf);
            let lift = cof * n as f64 / (af * bf);
            let (ga, gb) = (bigrams(strip(a)), bigrams(strip(b)));
            let sim = ga.intersection(&gb).count() as f64 / ga.union(&gb).count() as f64;
            if co >= cfg.min_cooccurrence
                && jaccard > cfg.min_pair_jaccard
                && confidence > cfg.min_confidence
                && lift > cfg.min_lift
                && sim < cfg.word_jaccard_filter
            {
                out.insert(
                    ((*a).clone(), (*b).clone()),
                    PairStats {
                        co_count: co,
                        count_a: ca,
                        count_b: cb,
                        jaccard,
                        confidence,
                        lift,
                    },
                );
            }
        }
    }
    out
}

pub fn small_corpus_config() -> MiningConfig {
    MiningConfig {
        min_item_freq: 2,
        ..MiningConfig::default()
    }
}

// ---------------------------------------------------------------- graphs

pub fn random_edges(r: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let m = r.gen_range(0..=n * 2);
    (0..m)
        .map(|_| (r.gen_range(0..n), r.gen_range(0..n)))
        .filter(|(a, b)| a != b)
        .collect()
}

/// Path-compressed union-find; groups sorted by smallest member.
pub fn union_find_groups(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while p[root] != root {
            root = p[root];
        }
        let mut y = x;
        while p[y] != root {
            let next = p[y];
            p[y] = root;
            y = next;
        }
        root
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for x in 0..n {
        let r = find(&mut parent, x);
        by_root.entry(r).or_default().push(x);
    }
    let mut groups: Vec<Vec<usize>> = by_root.into_values().collect();
    groups.sort();
    groups
}

pub fn is_partition(groups: &[EditGroup], k: usize) -> bool {
    let mut seen = vec![false; k];
    for g in groups {
        for &m in &g.members {
            if m >= k || seen[m] {
                return false;
            }
            seen[m] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

pub fn random_partition(r: &mut ChaCha8Rng, k: usize) -> Vec<EditGroup> {
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for i in 0..k {
        if cells.is_empty() || r.gen_bool(0.6) {
            cells.push(vec![i]);
        } else {
            let c = r.gen_range(0..cells.len());
            cells[c].push(i);
        }
    }
    cells.shuffle(r);
    cells
        .into_iter()
        .map(|members| EditGroup { members })
        .collect()
}

// ---------------------------------------------------------------- edits

const WORDS: [&str; 14] = [
    "the", "cat", "sat", "on", "a", "mat", "dog", "ran", "quickly", "home", "is", "was", ",", ".",
];
const HANZI: [&str; 14] = [
    "我", "你", "他", "的", "了", "是", "在", "有", "不", "人", "这", "中", "大", "上",
];

/// A random sentence and a mutation of it by random insert, delete and
/// substitute operations.
pub fn mutated_pair(r: &mut ChaCha8Rng, id: usize, language: Language) -> SentencePair {
    let vocab: &[&str] = if language == Language::Zh {
        &HANZI
    } else {
        &WORDS
    };
    let len = r.gen_range(0..16);
    let src: Vec<&str> = (0..len).map(|_| *vocab.choose(r).unwrap()).collect();
    let mut tgt = src.clone();
    for _ in 0..r.gen_range(0..6) {
        match r.gen_range(0..3) {
            0 => {
                let at = r.gen_range(0..=tgt.len());
                tgt.insert(at, vocab.choose(r).unwrap());
            }
            1 if !tgt.is_empty() => {
                let at = r.gen_range(0..tgt.len());
                tgt.remove(at);
            }
            _ if !tgt.is_empty() => {
                let at = r.gen_range(0..tgt.len());
                tgt[at] = vocab.choose(r).unwrap();
            }
            _ => {}
        }
    }
    let join = |t: &[&str]| t.join(language.joiner());
    SentencePair::new(format!("m{id}"), &join(&src), &join(&tgt), language)
}

pub fn round_trips(pair: &SentencePair) -> bool {
    let set = extract_edits(&pair.source, &pair.target);
    match apply_edits(&pair.source, &set.edits) {
        Ok(s) => s.tokens == pair.target.tokens,
        Err(_) => false,
    }
}

// ---------------------------------------------------------------- scorers

/// Integer-valued pseudo-perplexity from an FNV hash of the tokens, so
/// affine maps with dyadic or integer coefficients stay exact.
pub struct HashScorer;

impl Disfluency for HashScorer {
    fn id(&self) -> String {
        "hash-scorer".into()
    }

    fn disfluency(&self, sentence: &Sentence) -> Result<f64> {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in sentence.tokens.join(" ").bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        Ok((h % 1000) as f64)
    }
}

// ---------------------------------------------------------------- gradients

/// Worst relative error between analytic and central-difference gradients
/// over every parameter, with `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(seed: u64, input: usize, hidden: usize, with_masks: bool) -> f64 {
    let mut r = rng(seed);
    let layout = Layout::new(input, hidden);
    let params: Vec<f64> = (0..layout.len()).map(|_| r.gen_range(-0.5..0.5)).collect();
    let xs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..input).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<f64> = (0..3)
        .map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    let batch: Vec<(&[f64], f64)> = xs
        .iter()
        .map(|x| x.as_slice())
        .zip(ys.iter().copied())
        .collect();
    let masks: Option<Vec<Masks>> =
        with_masks.then(|| (0..3).map(|_| Masks::sample(hidden, 0.4, &mut r)).collect());
    let (_, grad) = batch_loss_and_grad(&params, layout, &batch, masks.as_deref()).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let (up, _) = batch_loss_and_grad(&p, layout, &batch, masks.as_deref()).unwrap();
        p[i] -= 2.0 * h;
        let (down, _) = batch_loss_and_grad(&p, layout, &batch, masks.as_deref()).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

// ---------------------------------------------------------------- synthetic learning

/// Items named `c<cluster>/<i>` embed near a hashed cluster center.
pub struct PlantedClusters {
    dim: usize,
    noise: f64,
    hash: HashProvider,
}

impl PlantedClusters {
    pub fn new(dim: usize, noise: f64, seed: u64) -> Self {
        PlantedClusters {
            dim,
            noise,
            hash: HashProvider::new(dim, seed).unwrap(),
        }
    }
}

impl EmbeddingProvider for PlantedClusters {
    fn id(&self) -> String {
        format!("planted-{}-{}", self.dim, self.noise)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        let cluster = text.split('/').next().unwrap_or(text);
        let center = self.hash.embed(&format!("center:{cluster}"))?;
        let jitter = self.hash.embed(&format!("item:{text}"))?;
        Vector::new(
            center
                .as_slice()
                .iter()
                .zip(jitter.as_slice())
                .map(|(c, j)| c + self.noise * j)
                .collect(),
        )
    }
}

/// Probability of a random positive outscoring a random negative, ties
/// counted half.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub struct SyntheticResult {
    pub auc: f64,
    pub epochs: usize,
}

/// 20 planted clusters in d = 32; positives are within-cluster pairs of
/// training items, negatives cross-cluster pairs at ratio 3. AUC is
/// measured on pairs of items never seen in training.
pub fn synthetic_learning(seed: u64) -> SyntheticResult {
    let (clusters, train_items, test_items) = (20, 6, 3);
    let provider = PlantedClusters::new(32, 0.35, seed);
    let name = |c: usize, i: usize| format!("c{c}/{i}");
    let mut r = rng(seed);

    let mut pairs = Vec::new();
    let mut positives = 0;
    for c in 0..clusters {
        for i in 0..train_items {
            for j in i + 1..train_items {
                pairs.push(LabeledPair::new(name(c, i), name(c, j), PairLabel::Positive).unwrap());
                positives += 1;
            }
        }
    }
    let mut negatives = BTreeSet::new();
    while negatives.len() < 3 * positives {
        let (c1, c2) = (r.gen_range(0..clusters), r.gen_range(0..clusters));
        if c1 == c2 {
            continue;
        }
        let (a, b) = (
            name(c1, r.gen_range(0..train_items)),
            name(c2, r.gen_range(0..train_items)),
        );
        negatives.insert(if a < b { (a, b) } else { (b, a) });
    }
    pairs.extend(
        negatives
            .into_iter()
            .map(|(a, b)| LabeledPair::new(a, b, PairLabel::Negative).unwrap()),
    );

    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 30,
        hidden: 64,
        seed,
        ..TrainConfig::default()
    };
    let (model, log) = train(&pairs, &provider, &cfg).unwrap();

    let held = |c: usize, i: usize| name(c, train_items + i);
    let predict = |a: &str, b: &str| {
        model
            .predict(&provider.embed(a).unwrap(), &provider.embed(b).unwrap())
            .unwrap()
    };
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for c in 0..clusters {
        for i in 0..test_items {
            for j in i + 1..test_items {
                pos.push(predict(&held(c, i), &held(c, j)));
            }
            for c2 in c + 1..clusters {
                neg.push(predict(&held(c, i), &held(c2, (i + c2) % test_items)));
            }
        }
    }
    SyntheticResult {
        auc: roc_auc(&pos, &neg),
        epochs: log.epochs.len(),
    }
}
