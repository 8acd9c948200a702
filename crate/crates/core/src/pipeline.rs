//! Corpus-level stages shared by the command line and the library API.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::assoc::{
    train, training_pairs, AssociationClassifier, EmbeddedAssociations, PairScorer, TrainingLog,
};
use crate::config::{EmbeddingSource, PipelineConfig, ScorerConfig};
use crate::corpus::{load_conllu, load_pairs, tokenize, DependencyTree, Language, SentencePair};
use crate::edits::{extract_edits, EditRecord, EditSet};
use crate::embed::{CachedProvider, EmbeddingProvider, FileProvider, HashProvider};
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_labels, EvalConfig, EvalReport};
use crate::merge::{
    displacy_merge, merge_sentence, singletons, EditGroup, MergeConfig, MergeRecord,
};
use crate::mining::{build_transactions, mine_pairs, MinedAssociations, MiningConfig};
use crate::providers::{RemoteEmbedder, RemotePerplexity};
use crate::rank::{
    fluency_curve, rank_greedy, rank_ours, rank_random, rank_vanilla, Disfluency, NGramLM,
    RankRecord, Ranker, StubScorer,
};
use crate::seeds::substream;

/// Runs `f` on a pool of `jobs` threads; results keep input order.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::io(path, e.into()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn edit_records(pairs: &[SentencePair]) -> Vec<EditRecord> {
    pairs
        .par_iter()
        .map(|p| EditRecord {
            id: p.id.clone(),
            edits: extract_edits(&p.source, &p.target).edits,
        })
        .collect()
}

pub fn edit_sets(pairs: &[SentencePair]) -> Vec<EditSet> {
    pairs
        .par_iter()
        .map(|p| extract_edits(&p.source, &p.target))
        .collect()
}

pub fn mine(pairs: &[SentencePair], cfg: &MiningConfig) -> Result<MinedAssociations> {
    mine_pairs(&build_transactions(pairs), cfg)
}

/// Mines associations from `pairs`, samples negatives and trains the
/// classifier.
pub fn train_associations(
    pairs: &[SentencePair],
    mining: &MiningConfig,
    cfg: &PipelineConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<(AssociationClassifier, TrainingLog, MinedAssociations)> {
    let transactions = build_transactions(pairs);
    let mined = mine_pairs(&transactions, mining)?;
    if mined.pairs.is_empty() {
        return Err(Error::InvalidInput(
            "mining accepted no pairs; nothing to train on".into(),
        ));
    }
    let labeled = training_pairs(&mined, &transactions, cfg.train.neg_ratio, cfg.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    train_cfg.embed_dim = Some(cfg.working_dim());
    let (model, log) = train(&labeled, provider, &train_cfg)?;
    Ok((model, log, mined))
}

#[derive(Deserialize)]
struct StubLine {
    text: String,
    value: f64,
}

pub fn load_stub(path: &Path, language: Language) -> Result<StubScorer> {
    let mut stub = StubScorer::new();
    for line in read_jsonl::<StubLine>(path)? {
        stub.insert(&line.text, language, line.value);
    }
    Ok(stub)
}

/// Fluency scorer named by the config. The n-gram model trains on the LM
/// text when given, otherwise on the targets of `fallback_corpus`.
pub fn build_scorer(
    cfg: &PipelineConfig,
    fallback_corpus: &[SentencePair],
) -> Result<Arc<dyn Disfluency>> {
    Ok(match &cfg.scorer {
        ScorerConfig::Ngram { order, k } => {
            let sentences = match &cfg.paths.lm_text {
                Some(p) => read_lines(p)?
                    .iter()
                    .map(|l| tokenize(l, cfg.language))
                    .collect(),
                None => fallback_corpus
                    .iter()
                    .map(|p| p.target.clone())
                    .collect::<Vec<_>>(),
            };
            Arc::new(NGramLM::train(&sentences, *order, *k)?)
        }
        ScorerConfig::Remote(r) => Arc::new(RemotePerplexity::new(r.clone())?),
        ScorerConfig::Stub { path } => Arc::new(load_stub(path, cfg.language)?),
    })
}

pub fn build_provider(cfg: &PipelineConfig) -> Result<Arc<dyn EmbeddingProvider>> {
    let e = &cfg.embedding;
    let base: Arc<dyn EmbeddingProvider> = match &e.provider {
        EmbeddingSource::Hash { seed } => Arc::new(HashProvider::new(e.dim, *seed)?),
        EmbeddingSource::File {
            path,
            hash_fallback,
        } => {
            let fallback = if *hash_fallback {
                Some(HashProvider::new(e.dim, cfg.seed)?)
            } else {
                None
            };
            Arc::new(FileProvider::load(path, fallback)?)
        }
        EmbeddingSource::Remote(r) => Arc::new(RemoteEmbedder::new(r.clone(), e.dim)?),
    };
    if base.dim() != e.dim {
        return Err(Error::DimensionMismatch {
            expected: e.dim,
            got: base.dim(),
        });
    }
    Ok(match &e.cache_dir {
        Some(dir) => Arc::new(CachedProvider::with_disk_cache(base, dir)?),
        None => Arc::new(CachedProvider::new(base)),
    })
}

pub fn load_trees(path: Option<&Path>) -> Result<BTreeMap<String, DependencyTree>> {
    match path {
        Some(p) => load_conllu(p),
        None => Ok(BTreeMap::new()),
    }
}

fn tree_for<'a>(
    trees: &'a BTreeMap<String, DependencyTree>,
    pair: &SentencePair,
) -> Result<Option<&'a DependencyTree>> {
    match trees.get(&pair.id) {
        Some(t) if t.len() != pair.target.len() => Err(Error::InvalidTree {
            id: pair.id.clone(),
            message: format!(
                "parse has {} tokens but the target has {}",
                t.len(),
                pair.target.len()
            ),
        }),
        other => Ok(other),
    }
}

pub fn merge_corpus(
    pairs: &[SentencePair],
    sets: &[EditSet],
    scorer: &dyn PairScorer,
    merge_cfg: &MergeConfig,
    trees: &BTreeMap<String, DependencyTree>,
) -> Result<Vec<MergeRecord>> {
    let records: Vec<MergeRecord> = pairs
        .par_iter()
        .zip(sets)
        .map(|(p, set)| {
            merge_sentence(
                &p.id,
                set,
                p.language,
                scorer,
                merge_cfg,
                tree_for(trees, p)?,
            )
        })
        .collect::<Result<_>>()?;
    let unparsed = records.iter().filter(|r| !r.warnings.is_empty()).count();
    if unparsed > 0 {
        warn!("{unparsed} sentences have no dependency parse; dependency constraint skipped");
    }
    Ok(records)
}

/// Per-instance seed for the random ranker.
fn instance_seed(seed: u64, id: &str) -> u64 {
    use rand::Rng;
    substream(seed, &format!("instance:{id}")).gen()
}

pub struct RankInputs<'a> {
    pub pairs: &'a [SentencePair],
    pub sets: &'a [EditSet],
    /// Learned groups per pair, keyed by id; required for `ours`.
    pub merges: &'a HashMap<String, Vec<EditGroup>>,
    pub trees: &'a BTreeMap<String, DependencyTree>,
    pub displacy_labels: &'a std::collections::BTreeSet<String>,
    pub seed: u64,
}

pub fn rank_corpus(
    inputs: &RankInputs<'_>,
    scorer: &dyn Disfluency,
    rankers: &[Ranker],
) -> Result<Vec<RankRecord>> {
    let per_pair: Vec<Vec<RankRecord>> = inputs
        .pairs
        .par_iter()
        .zip(inputs.sets)
        .map(|(p, set)| {
            rankers
                .iter()
                .map(|&r| rank_one(inputs, p, set, scorer, r))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if rankers.contains(&Ranker::Displacy) {
        let unparsed = inputs
            .pairs
            .iter()
            .zip(inputs.sets)
            .filter(|(p, set)| set.len() > 1 && !inputs.trees.contains_key(&p.id))
            .count();
        if unparsed > 0 {
            warn!(
                "{unparsed} sentences have no dependency parse; displacy ranks their edits singly"
            );
        }
    }
    Ok(per_pair.into_iter().flatten().collect())
}

fn rank_one(
    inputs: &RankInputs<'_>,
    p: &SentencePair,
    set: &EditSet,
    scorer: &dyn Disfluency,
    ranker: Ranker,
) -> Result<RankRecord> {
    let src = &p.source;
    let out = match ranker {
        Ranker::Ours => {
            let groups = inputs.merges.get(&p.id).ok_or_else(|| {
                Error::InvalidInput(format!("no merge groups for sentence {:?}", p.id))
            })?;
            rank_ours(scorer, src, set, groups)?
        }
        Ranker::Vanilla => rank_vanilla(scorer, src, set)?,
        Ranker::Greedy => rank_greedy(scorer, src, set)?,
        Ranker::Displacy => {
            let groups = match tree_for(inputs.trees, p)? {
                Some(t) => displacy_merge(set, t, inputs.displacy_labels)?,
                None => {
                    debug!("{}: no dependency parse; displacy uses singletons", p.id);
                    singletons(set.len())
                }
            };
            rank_ours(scorer, src, set, &groups)?
        }
        Ranker::Random => rank_random(set, instance_seed(inputs.seed, &p.id)),
    };
    let curve = fluency_curve(scorer, src, set, &out)?;
    Ok(RankRecord {
        id: p.id.clone(),
        ranker,
        groups: out.groups,
        edit_rank: out.edit_rank,
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub pairs: usize,
    pub mined_pairs: usize,
    pub output_dir: PathBuf,
    pub report: Option<EvalReport>,
}

/// Runs extract, mine, train-assoc, merge, rank and (with labels) eval,
/// writing every artifact under the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    let pairs_path = cfg
        .paths
        .pairs
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("config lacks paths.pairs".into()))?;
    let out_dir = cfg
        .paths
        .output_dir
        .clone()
        .ok_or_else(|| Error::InvalidInput("config lacks paths.output_dir".into()))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    with_jobs(cfg.jobs, || -> Result<PipelineSummary> {
        let mut pairs = load_pairs(pairs_path)?;
        if cfg.min_edits > 0 {
            let before = pairs.len();
            pairs.retain(|p| extract_edits(&p.source, &p.target).len() >= cfg.min_edits);
            info!(
                "kept {} of {before} pairs with >= {} edits",
                pairs.len(),
                cfg.min_edits
            );
        }
        let mining_pairs = match &cfg.paths.mining_pairs {
            Some(p) => load_pairs(p)?,
            None => pairs.clone(),
        };

        write_jsonl(&out_dir.join("edits.jsonl"), &edit_records(&pairs))?;
        let sets = edit_sets(&pairs);

        let provider = build_provider(cfg)?;
        let mining_cfg = cfg.mining();
        let (model, mined) = match &cfg.paths.model {
            Some(m) => (
                AssociationClassifier::load(m)?,
                mine(&mining_pairs, &mining_cfg)?,
            ),
            None => {
                let (model, log, mined) =
                    train_associations(&mining_pairs, &mining_cfg, cfg, provider.as_ref())?;
                write_json(&out_dir.join("training_log.json"), &log)?;
                (model, mined)
            }
        };
        let mut assoc_out = create(&out_dir.join("associations.jsonl"))?;
        mined
            .write_jsonl(&mut assoc_out)
            .and_then(|_| assoc_out.flush())
            .map_err(|e| Error::io(out_dir.join("associations.jsonl"), e))?;
        model.save(out_dir.join("model.json"))?;

        let trees = load_trees(cfg.paths.parses.as_deref())?;
        let assoc = EmbeddedAssociations::new(model, provider)?;
        let merges = merge_corpus(&pairs, &sets, &assoc, &cfg.merge(), &trees)?;
        write_jsonl(&out_dir.join("merge.jsonl"), &merges)?;

        let scorer = build_scorer(cfg, &mining_pairs)?;
        let merge_map: HashMap<String, Vec<EditGroup>> =
            merges.into_iter().map(|m| (m.id, m.groups)).collect();
        let inputs = RankInputs {
            pairs: &pairs,
            sets: &sets,
            merges: &merge_map,
            trees: &trees,
            displacy_labels: &cfg.displacy_labels,
            seed: cfg.seed,
        };
        let ranked = rank_corpus(&inputs, scorer.as_ref(), &cfg.rankers)?;
        write_jsonl(&out_dir.join("ranked.jsonl"), &ranked)?;

        let report = match &cfg.paths.labels {
            Some(l) => {
                let labels = load_labels(l)?;
                let report = evaluate(&ranked, &labels, &EvalConfig::default())?;
                write_json(&out_dir.join("report.json"), &report)?;
                Some(report)
            }
            None => None,
        };
        Ok(PipelineSummary {
            pairs: pairs.len(),
            mined_pairs: mined.pairs.len(),
            output_dir: out_dir.clone(),
            report,
        })
    })?
}
