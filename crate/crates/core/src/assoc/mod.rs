//! Learned pairwise edit associations: fused pair features, a residual MLP
//! classifier, negative sampling and model persistence.

pub mod mlp;
pub mod optim;
mod train;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use self::mlp::{forward, sigmoid, Layout, Masks};
pub use self::train::{train, EpochLog, TrainConfig, TrainingLog};
use crate::embed::{cosine_slices, embed_truncated, EmbeddingProvider, Vector};
use crate::error::{Error, Result};
use crate::mining::{MinedAssociations, Transaction};
use crate::seeds::substream;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.4;

/// `[a | b | cos(a, b) | a ⊙ b]`, length `3d + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedFeature(pub Vec<f64>);

pub fn fuse(a: &Vector, b: &Vector) -> Result<FusedFeature> {
    fuse_slices(a.as_slice(), b.as_slice()).map(FusedFeature)
}

fn fuse_slices(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let cos = cosine_slices(a, b)?;
    let d = a.len();
    let mut x = Vec::with_capacity(3 * d + 1);
    x.extend_from_slice(a);
    x.extend_from_slice(b);
    x.push(cos);
    x.extend(a.iter().zip(b).map(|(p, q)| p * q));
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Positive,
    Negative,
}

impl PairLabel {
    pub fn target(self) -> f64 {
        match self {
            PairLabel::Positive => 1.0,
            PairLabel::Negative => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub item_a: String,
    pub item_b: String,
    pub label: PairLabel,
}

impl LabeledPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>, label: PairLabel) -> Result<Self> {
        let (item_a, item_b) = (a.into(), b.into());
        if item_a == item_b {
            return Err(Error::InvalidInput(format!(
                "labeled pair of identical items {item_a:?}"
            )));
        }
        Ok(LabeledPair {
            item_a,
            item_b,
            label,
        })
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Samples unordered pairs of frequent items that never co-occur in a
/// transaction and are not positives; `min(ratio * |positives|, available)`
/// pairs, uniformly without replacement.
pub fn sample_negatives(
    items: &BTreeSet<String>,
    positives: &[(String, String)],
    transactions: &[Transaction],
    ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    if ratio == 0 {
        return Err(Error::InvalidInput(
            "negative ratio must be at least 1".into(),
        ));
    }
    let mut blocked: HashSet<(String, String)> =
        positives.iter().map(|(a, b)| unordered(a, b)).collect();
    for t in transactions {
        let present: Vec<&String> = t.items.iter().filter(|i| items.contains(*i)).collect();
        for (x, a) in present.iter().enumerate() {
            for b in &present[x + 1..] {
                blocked.insert(unordered(a, b));
            }
        }
    }
    let keys: Vec<&String> = items.iter().collect();
    let mut candidates = Vec::new();
    for (x, a) in keys.iter().enumerate() {
        for b in &keys[x + 1..] {
            let pair = ((*a).clone(), (*b).clone());
            if !blocked.contains(&pair) {
                candidates.push(pair);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "no negative candidates: every frequent item pair co-occurs".into(),
        ));
    }
    let count = (ratio * positives.len()).min(candidates.len());
    let mut rng = substream(seed, "negatives");
    Ok(index::sample(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|i| {
            let (a, b) = candidates[i].clone();
            LabeledPair {
                item_a: a,
                item_b: b,
                label: PairLabel::Negative,
            }
        })
        .collect())
}

/// Mined pairs as positives plus sampled negatives.
pub fn training_pairs(
    mined: &MinedAssociations,
    transactions: &[Transaction],
    ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let positives: Vec<(String, String)> = mined
        .pairs
        .iter()
        .map(|a| (a.item_a.clone(), a.item_b.clone()))
        .collect();
    let items: BTreeSet<String> = mined.frequent_items.keys().cloned().collect();
    let mut pairs: Vec<LabeledPair> = positives
        .iter()
        .map(|(a, b)| LabeledPair::new(a.clone(), b.clone(), PairLabel::Positive))
        .collect::<Result<_>>()?;
    pairs.extend(sample_negatives(
        &items,
        &positives,
        transactions,
        ratio,
        seed,
    )?);
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssociationClassifier {
    layout: Layout,
    pub dropout: f64,
    pub seed: u64,
    pub(crate) params: Vec<f64>,
}

impl AssociationClassifier {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn new(embed_dim: usize, hidden: usize, dropout: f64, seed: u64) -> Self {
        let layout = Layout::new(3 * embed_dim + 1, hidden);
        let mut params = vec![0.0; layout.len()];
        let mut rng = substream(seed, "init");
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        fill(layout.w1(), layout.input);
        fill(layout.w2(), hidden);
        fill(layout.w3(), hidden);
        fill(layout.w4(), hidden);
        AssociationClassifier {
            layout,
            dropout,
            seed,
            params,
        }
    }

    pub fn zeros(embed_dim: usize, hidden: usize) -> Self {
        let layout = Layout::new(3 * embed_dim + 1, hidden);
        AssociationClassifier {
            layout,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
            params: vec![0.0; layout.len()],
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.layout.hidden
    }

    pub fn embed_dim(&self) -> usize {
        (self.layout.input - 1) / 3
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_output_bias(&mut self, b: f64) {
        let i = self.layout.b4();
        self.params[i] = b;
    }

    /// Zeroes the weights and biases of both residual blocks.
    pub fn zero_residual_blocks(&mut self) {
        let l = self.layout;
        for r in [l.w2(), l.b2(), l.w3(), l.b3()] {
            self.params[r].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layout.input {
            return Err(Error::DimensionMismatch {
                expected: self.layout.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Inference-mode logit.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(forward(&self.params, self.layout, x, None).logit)
    }

    /// Training-mode logit under the given dropout masks.
    pub fn logit_with_masks(&self, x: &[f64], masks: &Masks) -> Result<f64> {
        self.check_input(x)?;
        Ok(forward(&self.params, self.layout, x, Some(masks)).logit)
    }

    /// Hidden activations after the first layer and after each residual
    /// block (inference mode).
    pub fn hidden_states(&self, x: &[f64]) -> Result<[Vec<f64>; 3]> {
        self.check_input(x)?;
        let l = self.layout;
        let p = &self.params;
        let trace_h1 = |x: &[f64]| -> Vec<f64> {
            let w = &p[l.w1()];
            p[l.b1()]
                .iter()
                .enumerate()
                .map(|(r, b)| {
                    (b + w[r * l.input..(r + 1) * l.input]
                        .iter()
                        .zip(x)
                        .map(|(a, c)| a * c)
                        .sum::<f64>())
                    .max(0.0)
                })
                .collect()
        };
        let block = |h: &[f64], w: &[f64], b: &[f64]| -> Vec<f64> {
            (0..l.hidden)
                .map(|r| {
                    let z = b[r]
                        + w[r * l.hidden..(r + 1) * l.hidden]
                            .iter()
                            .zip(h)
                            .map(|(a, c)| a * c)
                            .sum::<f64>();
                    h[r] + z.max(0.0)
                })
                .collect()
        };
        let h1 = trace_h1(x);
        let h2 = block(&h1, &p[l.w2()], &p[l.b2()]);
        let h3 = block(&h2, &p[l.w3()], &p[l.b3()]);
        Ok([h1, h2, h3])
    }

    pub fn probability(&self, x: &FusedFeature) -> Result<f64> {
        Ok(sigmoid(self.logit(&x.0)?))
    }

    /// Symmetrized association probability of two embeddings.
    pub fn predict(&self, a: &Vector, b: &Vector) -> Result<f64> {
        if a.dim() != self.embed_dim() || b.dim() != self.embed_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim(),
                got: if a.dim() != self.embed_dim() {
                    a.dim()
                } else {
                    b.dim()
                },
            });
        }
        let ab = self.probability(&fuse(a, b)?)?;
        let ba = self.probability(&fuse(b, a)?)?;
        Ok((ab + ba) / 2.0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&ModelFile::from_model(self))
            .map_err(|e| Error::Model(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Model(format!("corrupted model file: {e}")))?;
        match header.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Model(format!(
                    "format version {v} is not supported (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Model("missing format_version".into())),
        }
        let file: ModelFile = serde_json::from_value(header)
            .map_err(|e| Error::Model(format!("corrupted model file: {e}")))?;
        file.into_model()
    }
}

#[derive(Serialize, Deserialize)]
struct Layers {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    w3: Vec<Vec<f64>>,
    b3: Vec<f64>,
    w4: Vec<Vec<f64>>,
    b4: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    input_dim: usize,
    hidden_dim: usize,
    seed: u64,
    dropout: f64,
    layers: Layers,
}

impl ModelFile {
    fn from_model(m: &AssociationClassifier) -> Self {
        let l = m.layout;
        let p = &m.params;
        let rows = |r: std::ops::Range<usize>, width: usize| -> Vec<Vec<f64>> {
            p[r].chunks(width).map(<[f64]>::to_vec).collect()
        };
        ModelFile {
            format_version: FORMAT_VERSION,
            input_dim: l.input,
            hidden_dim: l.hidden,
            seed: m.seed,
            dropout: m.dropout,
            layers: Layers {
                w1: rows(l.w1(), l.input),
                b1: p[l.b1()].to_vec(),
                w2: rows(l.w2(), l.hidden),
                b2: p[l.b2()].to_vec(),
                w3: rows(l.w3(), l.hidden),
                b3: p[l.b3()].to_vec(),
                w4: rows(l.w4(), l.hidden),
                b4: vec![p[l.b4()]],
            },
        }
    }

    fn into_model(self) -> Result<AssociationClassifier> {
        if self.input_dim == 0 || !(self.input_dim - 1).is_multiple_of(3) || self.hidden_dim == 0 {
            return Err(Error::Model(format!(
                "invalid dimensions input={} hidden={}",
                self.input_dim, self.hidden_dim
            )));
        }
        let layout = Layout::new(self.input_dim, self.hidden_dim);
        let mut params = Vec::with_capacity(layout.len());
        let mut take_matrix = |name: &str, m: &[Vec<f64>], rows: usize, cols: usize| {
            if m.len() != rows || m.iter().any(|r| r.len() != cols) {
                return Err(Error::Model(format!(
                    "corrupted model file: {name} is not {rows}x{cols}"
                )));
            }
            m.iter().for_each(|r| params.extend_from_slice(r));
            Ok(())
        };
        let h = layout.hidden;
        let l = &self.layers;
        take_matrix("w1", &l.w1, h, layout.input)?;
        take_matrix("b1", std::slice::from_ref(&l.b1), 1, h)?;
        take_matrix("w2", &l.w2, h, h)?;
        take_matrix("b2", std::slice::from_ref(&l.b2), 1, h)?;
        take_matrix("w3", &l.w3, h, h)?;
        take_matrix("b3", std::slice::from_ref(&l.b3), 1, h)?;
        take_matrix("w4", &l.w4, 1, h)?;
        take_matrix("b4", std::slice::from_ref(&l.b4), 1, 1)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Model("non-finite weight".into()));
        }
        Ok(AssociationClassifier {
            layout,
            dropout: self.dropout,
            seed: self.seed,
            params,
        })
    }
}

/// Anything that assigns an association probability to two item keys.
pub trait PairScorer: Send + Sync {
    fn probability(&self, item_a: &str, item_b: &str) -> Result<f64>;
}

/// Classifier over truncated provider embeddings.
pub struct EmbeddedAssociations {
    pub model: AssociationClassifier,
    pub provider: Arc<dyn EmbeddingProvider>,
}

impl EmbeddedAssociations {
    pub fn new(model: AssociationClassifier, provider: Arc<dyn EmbeddingProvider>) -> Result<Self> {
        if provider.dim() < model.embed_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.embed_dim(),
                got: provider.dim(),
            });
        }
        Ok(EmbeddedAssociations { model, provider })
    }

    fn vector(&self, item: &str) -> Result<Vector> {
        embed_truncated(self.provider.as_ref(), item, self.model.embed_dim())
    }
}

impl PairScorer for EmbeddedAssociations {
    fn probability(&self, item_a: &str, item_b: &str) -> Result<f64> {
        self.model
            .predict(&self.vector(item_a)?, &self.vector(item_b)?)
    }
}

/// Fixed probabilities per unordered item pair; unknown pairs get `default`.
#[derive(Clone, Debug, Default)]
pub struct TablePairScorer {
    table: BTreeMap<(String, String), f64>,
    pub default: f64,
}

impl TablePairScorer {
    pub fn new(default: f64) -> Self {
        TablePairScorer {
            table: BTreeMap::new(),
            default,
        }
    }

    pub fn with(mut self, a: &str, b: &str, r: f64) -> Self {
        self.table.insert(unordered(a, b), r);
        self
    }
}

impl PairScorer for TablePairScorer {
    fn probability(&self, item_a: &str, item_b: &str) -> Result<f64> {
        Ok(*self
            .table
            .get(&unordered(item_a, item_b))
            .unwrap_or(&self.default))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashProvider;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn fuse_layout() {
        let f = fuse(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(f.0, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let f = fuse(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(f.0, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let p = HashProvider::new(256, 0).unwrap();
        let f = fuse(&p.embed("a").unwrap(), &p.embed("b").unwrap()).unwrap();
        assert_eq!(f.0.len(), 769);
        assert!(fuse(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    fn items(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn negative_count_and_determinism() {
        let all = items(&["a", "b", "c", "d", "e", "f", "g", "h"]);
        let pos = vec![
            ("a".to_string(), "b".to_string()),
            ("c".to_string(), "d".to_string()),
            ("e".to_string(), "f".to_string()),
        ];
        let tx: Vec<Transaction> = vec![["a", "b"].into_iter().collect()];
        let neg = sample_negatives(&all, &pos, &tx, 3, 42).unwrap();
        assert_eq!(neg.len(), 9);
        assert_eq!(neg, sample_negatives(&all, &pos, &tx, 3, 42).unwrap());
        for n in &neg {
            let key = unordered(&n.item_a, &n.item_b);
            assert!(!pos.contains(&key));
            assert_ne!(n.item_a, n.item_b);
        }
    }

    #[test]
    fn negatives_capped_and_exhausted() {
        let all = items(&["a", "b", "c"]);
        let pos = vec![("a".to_string(), "b".to_string())];
        let neg = sample_negatives(&all, &pos, &[], 3, 1).unwrap();
        assert_eq!(neg.len(), 2);

        let tx: Vec<Transaction> = vec![["a", "b", "c"].into_iter().collect()];
        assert!(sample_negatives(&all, &pos, &tx, 3, 1).is_err());
        assert!(sample_negatives(&all, &pos, &[], 0, 1).is_err());
    }

    #[test]
    fn zero_model_predicts_sigmoid_of_bias() {
        let mut m = AssociationClassifier::zeros(4, 8);
        let p = HashProvider::new(4, 0).unwrap();
        let (a, b) = (p.embed("x").unwrap(), p.embed("y").unwrap());
        assert_eq!(m.predict(&a, &b).unwrap(), 0.5);
        m.set_output_bias(2.0);
        assert!((m.predict(&a, &b).unwrap() - sigmoid(2.0)).abs() < 1e-15);
    }

    #[test]
    fn prediction_is_symmetric() {
        let m = AssociationClassifier::new(8, 16, 0.4, 3);
        let p = HashProvider::new(8, 0).unwrap();
        let (a, b) = (p.embed("look").unwrap(), p.embed("for").unwrap());
        assert_eq!(m.predict(&a, &b).unwrap(), m.predict(&b, &a).unwrap());
        assert!(m.predict(&a, &p.embed("z").unwrap()).is_ok());
        assert!(m.predict(&a, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn residual_blocks_are_identity_when_zeroed() {
        let mut m = AssociationClassifier::new(4, 16, 0.4, 9);
        m.zero_residual_blocks();
        let x: Vec<f64> = (0..13).map(|i| (i as f64 * 0.37).sin()).collect();
        let [h1, h2, h3] = m.hidden_states(&x).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h2, h3);
    }

    #[test]
    fn model_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = AssociationClassifier::new(4, 8, 0.4, 5);
        m.save(&path).unwrap();
        let back = AssociationClassifier::load(&path).unwrap();
        assert_eq!(back, m);

        assert!(AssociationClassifier::load(dir.path().join("missing.json")).is_err());
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            AssociationClassifier::load(&path),
            Err(Error::Model(_))
        ));
        let bumped = text.replace("\"format_version\":1", "\"format_version\":99");
        match AssociationClassifier::from_json(&bumped) {
            Err(Error::Model(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn table_scorer_is_unordered() {
        let t = TablePairScorer::new(0.1).with("b", "a", 0.9);
        assert_eq!(t.probability("a", "b").unwrap(), 0.9);
        assert_eq!(t.probability("a", "c").unwrap(), 0.1);
    }
}
