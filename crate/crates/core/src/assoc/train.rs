use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{batch_loss_and_grad, bce_with_logit, forward, Masks};
use super::optim::AdamW;
use super::{
    fuse_slices, AssociationClassifier, LabeledPair, PairLabel, DEFAULT_DROPOUT, DEFAULT_HIDDEN,
};
use crate::embed::{embed_truncated, EmbeddingProvider, Vector};
use crate::error::{Error, Result};
use crate::seeds::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without improvement before the learning rate is halved.
    pub patience: usize,
    pub min_improvement: f64,
    pub neg_ratio: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Embedding dimension fed to the classifier; the provider's dimension
    /// when unset, otherwise an MRL truncation.
    pub embed_dim: Option<usize>,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-2,
            batch_size: 64,
            epochs: 30,
            patience: 3,
            min_improvement: 1e-4,
            neg_ratio: 3,
            hidden: DEFAULT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
            embed_dim: None,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("train config: {m}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.epochs == 0 || self.patience == 0 || self.hidden == 0 {
            return bad("epochs, patience and hidden must be positive");
        }
        if self.neg_ratio == 0 {
            return bad("neg_ratio must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub n_train: usize,
    pub n_val: usize,
}

struct Example {
    a: usize,
    b: usize,
    y: f64,
}

/// Trains the association classifier with class-balanced mini-batches and
/// returns the parameters from the epoch with the lowest validation loss.
pub fn train(
    pairs: &[LabeledPair],
    provider: &dyn EmbeddingProvider,
    config: &TrainConfig,
) -> Result<(AssociationClassifier, TrainingLog)> {
    config.validate()?;
    let dim = config.embed_dim.unwrap_or_else(|| provider.dim());
    if dim == 0 || dim > provider.dim() {
        return Err(Error::DimensionMismatch {
            expected: provider.dim(),
            got: dim,
        });
    }

    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for p in pairs {
        if p.item_a == p.item_b {
            return Err(Error::InvalidInput(format!(
                "labeled pair of identical items {:?}",
                p.item_a
            )));
        }
        let n = index.len();
        index.entry(p.item_a.as_str()).or_insert(n);
        let n = index.len();
        index.entry(p.item_b.as_str()).or_insert(n);
    }
    let mut vectors: Vec<Vector> = vec![Vector::zeros(dim); index.len()];
    for (item, &i) in &index {
        vectors[i] = embed_truncated(provider, item, dim)?;
    }

    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in pairs {
        let ex = Example {
            a: index[p.item_a.as_str()],
            b: index[p.item_b.as_str()],
            y: p.label.target(),
        };
        match p.label {
            PairLabel::Positive => pos.push(ex),
            PairLabel::Negative => neg.push(ex),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Training(format!(
            "both labels are required (positives={}, negatives={})",
            pos.len(),
            neg.len()
        )));
    }

    let mut split_rng = substream(config.seed, "split");
    let (train_pos, mut val) = split(pos, config.val_fraction, &mut split_rng);
    let (train_neg, val_neg) = split(neg, config.val_fraction, &mut split_rng);
    val.extend(val_neg);
    let n_train = train_pos.len() + train_neg.len();
    let n_val = val.len();
    let val_on_train = val.is_empty();
    if val_on_train {
        info!("validation split is empty; validating on the training pairs");
    }

    let features = |e: &Example, swap: bool| -> Result<Vec<f64>> {
        let (a, b) = if swap { (e.b, e.a) } else { (e.a, e.b) };
        fuse_slices(vectors[a].as_slice(), vectors[b].as_slice())
    };
    let val_src: Vec<&Example> = if val_on_train {
        train_pos.iter().chain(&train_neg).collect()
    } else {
        val.iter().collect()
    };
    let val_set: Vec<(Vec<f64>, Vec<f64>, f64)> = val_src
        .into_iter()
        .map(|e| Ok((features(e, false)?, features(e, true)?, e.y)))
        .collect::<Result<_>>()?;

    let mut model = AssociationClassifier::new(dim, config.hidden, config.dropout, config.seed);
    let layout = model.layout();
    let validation_loss = |params: &[f64]| -> f64 {
        let total: f64 = val_set
            .iter()
            .map(|(ab, ba, y)| {
                let l1 = bce_with_logit(forward(params, layout, ab, None).logit, *y);
                let l2 = bce_with_logit(forward(params, layout, ba, None).logit, *y);
                (l1 + l2) / 2.0
            })
            .sum();
        total / val_set.len() as f64
    };

    let mut opt = AdamW::new(layout.len(), config.lr, config.weight_decay);
    let mut rng = substream(config.seed, "batches");
    let half = config.batch_size / 2;
    let (major, minor) = if train_pos.len() >= train_neg.len() {
        (&train_pos, &train_neg)
    } else {
        (&train_neg, &train_pos)
    };

    let mut best_params = model.params.clone();
    let mut best_val = validation_loss(&model.params);
    let mut log = TrainingLog {
        best_val_loss: best_val,
        n_train,
        n_val,
        ..TrainingLog::default()
    };
    let mut plateau = Plateau::new(best_val, config.patience, config.min_improvement);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..major.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(half) {
            let mut batch: Vec<(Vec<f64>, f64)> = Vec::with_capacity(chunk.len() * 2);
            for &i in chunk {
                let e = &major[i];
                batch.push((features(e, rng.gen())?, e.y));
            }
            for _ in 0..chunk.len() {
                let e = &minor[rng.gen_range(0..minor.len())];
                batch.push((features(e, rng.gen())?, e.y));
            }
            let masks: Vec<Masks> = (0..batch.len())
                .map(|_| Masks::sample(layout.hidden, config.dropout, &mut rng))
                .collect();
            let refs: Vec<(&[f64], f64)> = batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
            let (loss, grad) = batch_loss_and_grad(&model.params, layout, &refs, Some(&masks))?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite training loss at epoch {epoch}, batch {n_batches} (lr={})",
                    opt.lr
                )));
            }
            opt.step(&mut model.params, &grad);
            epoch_loss += loss;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches as f64;
        let val_loss = validation_loss(&model.params);
        if !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss at epoch {epoch} (train loss {train_loss}, lr={})",
                opt.lr
            )));
        }
        info!(
            "epoch {epoch}: train_loss={train_loss:.6} val_loss={val_loss:.6} lr={:.3e}",
            opt.lr
        );
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_params.clone_from(&model.params);
            log.best_epoch = epoch;
            log.best_val_loss = val_loss;
        }
        if plateau.observe(val_loss) {
            opt.lr /= 2.0;
            info!("validation loss stalled; lr halved to {:.3e}", opt.lr);
        }
    }
    model.params = best_params;
    Ok((model, log))
}

/// Signals a learning-rate cut once the loss has failed to improve on the
/// best seen value by `min_delta` for `patience` consecutive observations.
#[derive(Clone, Debug)]
pub(crate) struct Plateau {
    best: f64,
    stalled: usize,
    patience: usize,
    min_delta: f64,
}

impl Plateau {
    pub(crate) fn new(initial: f64, patience: usize, min_delta: f64) -> Self {
        Plateau {
            best: initial,
            stalled: 0,
            patience,
            min_delta,
        }
    }

    pub(crate) fn observe(&mut self, loss: f64) -> bool {
        if loss <= self.best - self.min_delta {
            self.best = loss;
            self.stalled = 0;
            return false;
        }
        self.stalled += 1;
        if self.stalled >= self.patience {
            self.stalled = 0;
            return true;
        }
        false
    }
}

/// Seeded shuffle, then the first `round(fraction * n)` go to validation,
/// keeping at least one example for training.
fn split(mut xs: Vec<Example>, fraction: f64, rng: &mut impl Rng) -> (Vec<Example>, Vec<Example>) {
    xs.shuffle(rng);
    let n_val = ((xs.len() as f64 * fraction).round() as usize).min(xs.len().saturating_sub(1));
    let train = xs.split_off(n_val);
    (train, xs)
}
