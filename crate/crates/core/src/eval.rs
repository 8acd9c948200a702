//! Boundary and ranking scores for labeled rankings, corpus reports and
//! inter-annotator agreement.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::{RankRecord, Ranker};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditLabel {
    Corrected,
    Reasonable,
}

impl EditLabel {
    pub fn is_cor(self) -> bool {
        self == EditLabel::Corrected
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { epsilon: 1e-9 }
    }
}

/// Labels listed in predicted rank order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledRanking {
    pub labels: Vec<EditLabel>,
}

impl LabeledRanking {
    pub fn new(labels: Vec<EditLabel>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("labeled ranking is empty".into()));
        }
        Ok(LabeledRanking { labels })
    }

    /// Reorders per-edit labels (in edit-set order) by rank position, ties
    /// within a merged group by edit index.
    pub fn from_edit_rank(labels: &[EditLabel], edit_rank: &[usize]) -> Result<Self> {
        if labels.len() != edit_rank.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} ranked edits",
                labels.len(),
                edit_rank.len()
            )));
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| (edit_rank[i], i));
        Self::new(order.into_iter().map(|i| labels[i]).collect())
    }

    pub fn n_cor(&self) -> usize {
        self.labels.iter().filter(|l| l.is_cor()).count()
    }

    pub fn n_rea(&self) -> usize {
        self.labels.len() - self.n_cor()
    }
}

/// `1 - μ/k` where μ counts Rea within the first N_cor positions plus Cor
/// after them.
pub fn s_bound(lr: &LabeledRanking) -> f64 {
    let n_cor = lr.n_cor();
    let mu = lr
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, l)| (i < n_cor) != l.is_cor())
        .count();
    1.0 - mu as f64 / lr.labels.len() as f64
}

/// Inversions: pairs with a Rea ranked ahead of a Cor.
pub fn inversions(lr: &LabeledRanking) -> usize {
    let mut rea_seen = 0;
    let mut sigma = 0;
    for l in &lr.labels {
        if l.is_cor() {
            sigma += rea_seen;
        } else {
            rea_seen += 1;
        }
    }
    sigma
}

/// `1 - σ / (N_cor · N_rea + ε)`.
pub fn s_rank(lr: &LabeledRanking, cfg: &EvalConfig) -> f64 {
    let max = (lr.n_cor() * lr.n_rea()) as f64;
    1.0 - inversions(lr) as f64 / (max + cfg.epsilon)
}

/// Label file record, aligned to edit-set order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub labels: Vec<EditLabel>,
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<EditLabel>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if out.insert(rec.id.clone(), rec.labels).is_some() {
            return Err(Error::DuplicateId(rec.id));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    pub ranker: Ranker,
    pub s_bound: f64,
    pub s_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerSummary {
    pub s_bound_mean: f64,
    pub s_rank_mean: f64,
    pub n_instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_ranker: BTreeMap<Ranker, RankerSummary>,
    /// Ranked records skipped for lack of labels or edits.
    pub excluded: usize,
    pub instances: Vec<InstanceScore>,
}

/// Scores every ranked record against its labels and macro-averages per
/// ranker. Records without labels, or with no edits, are excluded and counted.
pub fn evaluate(
    records: &[RankRecord],
    labels: &HashMap<String, Vec<EditLabel>>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if cfg.epsilon.is_nan() || cfg.epsilon <= 0.0 {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    let mut instances = Vec::new();
    let mut excluded = 0;
    for rec in records {
        let Some(l) = labels.get(&rec.id) else {
            excluded += 1;
            continue;
        };
        if rec.edit_rank.is_empty() {
            excluded += 1;
            continue;
        }
        let lr = LabeledRanking::from_edit_rank(l, &rec.edit_rank)
            .map_err(|e| Error::InvalidInput(format!("{} ({}): {e}", rec.id, rec.ranker)))?;
        instances.push(InstanceScore {
            id: rec.id.clone(),
            ranker: rec.ranker,
            s_bound: s_bound(&lr),
            s_rank: s_rank(&lr, cfg),
        });
    }
    let mut per_ranker: BTreeMap<Ranker, (f64, f64, usize)> = BTreeMap::new();
    for s in &instances {
        let e = per_ranker.entry(s.ranker).or_default();
        e.0 += s.s_bound;
        e.1 += s.s_rank;
        e.2 += 1;
    }
    Ok(EvalReport {
        per_ranker: per_ranker
            .into_iter()
            .map(|(r, (b, k, n))| {
                (
                    r,
                    RankerSummary {
                        s_bound_mean: b / n as f64,
                        s_rank_mean: k / n as f64,
                        n_instances: n,
                    },
                )
            })
            .collect(),
        excluded,
        instances,
    })
}

/// Cohen's kappa over two aligned two-class label lists.
pub fn cohen_kappa(a: &[EditLabel], b: &[EditLabel]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "label lists differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("label lists are empty".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let p_o = agree / n;
    let ca = a.iter().filter(|l| l.is_cor()).count() as f64 / n;
    let cb = b.iter().filter(|l| l.is_cor()).count() as f64 / n;
    let p_e = ca * cb + (1.0 - ca) * (1.0 - cb);
    if p_e == 1.0 {
        if p_o == 1.0 {
            return Ok(1.0);
        }
        return Err(Error::InvalidInput(
            "kappa undefined: chance agreement is 1".into(),
        ));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}
