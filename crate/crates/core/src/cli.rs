//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use log::info;

use crate::assoc::{AssociationClassifier, EmbeddedAssociations, PairScorer};
use crate::config::PipelineConfig;
use crate::corpus::{corpus_stats, load_pairs, Language};
use crate::edits::extract_edits;
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_labels, EvalConfig};
use crate::merge::{associations_to_dot, build_graph, graph_to_dot, EditGroup, MergeRecord};
use crate::mining::{Association, MinedAssociations};
use crate::pipeline::{
    build_provider, build_scorer, create, edit_records, edit_sets, load_trees, merge_corpus, mine,
    rank_corpus, read_jsonl, run_pipeline, train_associations, with_jobs, write_json, write_jsonl,
    RankInputs,
};
use crate::rank::{RankRecord, Ranker};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "editimpact",
    version,
    about = "Score and rank GEC edits by their impact on fluency"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration file (JSON); built-in defaults when omitted
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Language whose mining and merge settings apply (en, zh, de, es)
    #[arg(long, value_name = "LANG")]
    pub lang: Option<String>,
    /// Master seed for every random stage
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-sentence stages
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract token-level edits from sentence pairs
    Extract {
        #[command(flatten)]
        common: Common,
        /// Sentence pairs (JSON Lines with id, source, target, lang)
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Output edits file (JSON Lines)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Drop pairs with fewer edits
        #[arg(long, value_name = "N")]
        min_edits: Option<usize>,
    },
    /// Print corpus statistics as JSON
    Stats {
        #[command(flatten)]
        common: Common,
        /// Sentence pairs (JSON Lines)
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Write to a file instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Mine co-occurring edit pairs
    Mine {
        #[command(flatten)]
        common: Common,
        /// Sentence pairs (JSON Lines)
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Output associations file (JSON Lines)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Mine associations and train the edit-association classifier
    TrainAssoc {
        #[command(flatten)]
        common: Common,
        /// Sentence pairs used for mining and training (JSON Lines)
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Output model file (JSON)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write the per-epoch training log (JSON)
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Group coupled edits with the trained classifier
    Merge {
        #[command(flatten)]
        common: Common,
        /// Sentence pairs (JSON Lines)
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Trained classifier (JSON)
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Dependency parses of the targets (CoNLL-U)
        #[arg(long, value_name = "FILE")]
        parses: Option<PathBuf>,
        /// Output merge file (JSON Lines)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Rank edit groups by fluency impact
    Rank {
        #[command(flatten)]
        common: Common,
        /// Sentence pairs (JSON Lines)
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Merge file from `merge`; required by the `ours` ranker
        #[arg(long, value_name = "FILE")]
        merges: Option<PathBuf>,
        /// Dependency parses of the targets (CoNLL-U), used by `displacy`
        #[arg(long, value_name = "FILE")]
        parses: Option<PathBuf>,
        /// Language-model text for the n-gram scorer, one sentence per line
        #[arg(long, value_name = "FILE")]
        lm_text: Option<PathBuf>,
        /// Rankers to run (ours, vanilla, greedy, displacy, random)
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        rankers: Option<Vec<Ranker>>,
        /// Output ranked file (JSON Lines)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score ranked output against Cor/Rea labels
    Eval {
        /// Ranked file from `rank` (JSON Lines)
        #[arg(long, value_name = "FILE")]
        ranked: PathBuf,
        /// Label file (JSON Lines with id and labels)
        #[arg(long, value_name = "FILE")]
        labels: PathBuf,
        /// Stabilizer added to the inversion normalizer
        #[arg(long, default_value_t = EvalConfig::default().epsilon)]
        epsilon: f64,
        /// Output report (JSON); stdout when omitted
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write Graphviz DOT graphs of associations or sentence edit graphs
    ExportGraph {
        #[command(flatten)]
        common: Common,
        /// Associations file from `mine`; renders the top pairs
        #[arg(long, value_name = "FILE", conflicts_with = "pairs")]
        associations: Option<PathBuf>,
        /// Number of associations to render
        #[arg(long, default_value_t = 50)]
        top: usize,
        /// Sentence pairs; renders one edit graph per sentence
        #[arg(long, value_name = "FILE", requires = "model")]
        pairs: Option<PathBuf>,
        /// Trained classifier; labels edges with association scores
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Dependency parses of the targets (CoNLL-U)
        #[arg(long, value_name = "FILE")]
        parses: Option<PathBuf>,
        /// Output DOT file (associations) or directory (sentence graphs)
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Run extract, mine, train-assoc, merge, rank and eval end to end
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Output directory, overriding the config
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

/// Loads the config (or defaults) and applies flag overrides.
fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(tag) = &common.lang {
        let (lang, known) = Language::parse(tag);
        if !known {
            return Err(Error::InvalidInput(format!("unknown language {tag:?}")));
        }
        cfg.language = lang;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            let mut out = create(p)?;
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn load_scorer(cfg: &PipelineConfig, model: &Path) -> Result<EmbeddedAssociations> {
    EmbeddedAssociations::new(AssociationClassifier::load(model)?, build_provider(cfg)?)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Extract {
            common,
            pairs,
            out,
            min_edits,
        } => {
            let cfg = load_config(&common)?;
            let mut corpus = load_pairs(&pairs)?;
            if let Some(n) = min_edits {
                corpus.retain(|p| extract_edits(&p.source, &p.target).len() >= n);
            }
            let records = with_jobs(cfg.jobs, || edit_records(&corpus))?;
            write_jsonl(&out, &records)?;
            info!("wrote {} edit records to {}", records.len(), out.display());
        }
        Command::Stats { common, pairs, out } => {
            let cfg = load_config(&common)?;
            let corpus = load_pairs(&pairs)?;
            let stats = with_jobs(cfg.jobs, || corpus_stats(&corpus, extract_edits))??;
            write_text(out.as_deref(), &pretty(&stats))?;
        }
        Command::Mine { common, pairs, out } => {
            let cfg = load_config(&common)?;
            let corpus = load_pairs(&pairs)?;
            let mined = mine(&corpus, &cfg.mining())?;
            write_jsonl(&out, &mined.pairs)?;
            info!("accepted {} pairs", mined.pairs.len());
        }
        Command::TrainAssoc {
            common,
            pairs,
            out,
            log,
        } => {
            let cfg = load_config(&common)?;
            let corpus = load_pairs(&pairs)?;
            let provider = build_provider(&cfg)?;
            let (model, training, _) = with_jobs(cfg.jobs, || {
                train_associations(&corpus, &cfg.mining(), &cfg, provider.as_ref())
            })??;
            model.save(&out)?;
            if let Some(p) = log {
                write_json(&p, &training)?;
            }
        }
        Command::Merge {
            common,
            pairs,
            model,
            parses,
            out,
        } => {
            let cfg = load_config(&common)?;
            let corpus = load_pairs(&pairs)?;
            let scorer = load_scorer(&cfg, &model)?;
            let trees = load_trees(parses.as_deref())?;
            let records = with_jobs(cfg.jobs, || {
                merge_corpus(&corpus, &edit_sets(&corpus), &scorer, &cfg.merge(), &trees)
            })??;
            write_jsonl(&out, &records)?;
        }
        Command::Rank {
            common,
            pairs,
            merges,
            parses,
            lm_text,
            rankers,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if lm_text.is_some() {
                cfg.paths.lm_text = lm_text;
            }
            let rankers = rankers.unwrap_or_else(|| cfg.rankers.clone());
            let corpus = load_pairs(&pairs)?;
            let merge_map: HashMap<String, Vec<EditGroup>> = match &merges {
                Some(p) => read_jsonl::<MergeRecord>(p)?
                    .into_iter()
                    .map(|m| (m.id, m.groups))
                    .collect(),
                None if rankers.contains(&Ranker::Ours) => {
                    return Err(Error::InvalidInput("the ours ranker needs --merges".into()))
                }
                None => HashMap::new(),
            };
            let trees = load_trees(parses.as_deref())?;
            let scorer = build_scorer(&cfg, &corpus)?;
            let records = with_jobs(cfg.jobs, || {
                let sets = edit_sets(&corpus);
                let inputs = RankInputs {
                    pairs: &corpus,
                    sets: &sets,
                    merges: &merge_map,
                    trees: &trees,
                    displacy_labels: &cfg.displacy_labels,
                    seed: cfg.seed,
                };
                rank_corpus(&inputs, scorer.as_ref(), &rankers)
            })??;
            write_jsonl(&out, &records)?;
        }
        Command::Eval {
            ranked,
            labels,
            epsilon,
            out,
        } => {
            let records: Vec<RankRecord> = read_jsonl(&ranked)?;
            let labels = load_labels(&labels)?;
            let report = evaluate(&records, &labels, &EvalConfig { epsilon })?;
            write_text(out.as_deref(), &pretty(&report))?;
        }
        Command::ExportGraph {
            common,
            associations,
            top,
            pairs,
            model,
            parses,
            out,
        } => {
            let cfg = load_config(&common)?;
            let scorer = model.as_deref().map(|m| load_scorer(&cfg, m)).transpose()?;
            match (associations, pairs) {
                (Some(a), None) => {
                    let mined = MinedAssociations {
                        pairs: read_jsonl::<Association>(&a)?,
                        frequent_items: Default::default(),
                        n_transactions: 0,
                    };
                    let dot = associations_to_dot(
                        &mined,
                        top,
                        scorer.as_ref().map(|s| s as &dyn PairScorer),
                    )?;
                    write_text(Some(&out), &dot)?;
                }
                (None, Some(p)) => {
                    let scorer = scorer.expect("clap requires --model with --pairs");
                    let corpus = load_pairs(&p)?;
                    let trees = load_trees(parses.as_deref())?;
                    let merge_cfg = cfg.merge();
                    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                    for pair in &corpus {
                        let set = extract_edits(&pair.source, &pair.target);
                        let graph = build_graph(
                            &set,
                            pair.language,
                            &scorer,
                            &merge_cfg,
                            trees.get(&pair.id),
                        )?;
                        let path = out.join(format!("{}.dot", sanitize(&pair.id)));
                        write_text(Some(&path), &graph_to_dot(&pair.id, &set, &graph))?;
                    }
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "export-graph needs --associations or --pairs with --model".into(),
                    ))
                }
            }
        }
        Command::Pipeline { common, out } => {
            if common.config.is_none() {
                return Err(Error::InvalidInput("pipeline needs --config".into()));
            }
            let mut cfg = load_config(&common)?;
            if out.is_some() {
                cfg.paths.output_dir = out;
            }
            let summary = run_pipeline(&cfg)?;
            if let Some(report) = &summary.report {
                for (ranker, s) in &report.per_ranker {
                    println!(
                        "{ranker}\ts_bound={:.4}\ts_rank={:.4}\tn={}",
                        s.s_bound_mean, s.s_rank_mean, s.n_instances
                    );
                }
            }
        }
    }
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_backend() {
        EXIT_BACKEND
    } else {
        EXIT_DATA
    }
}

/// Help text of a subcommand (or the top level for `None`), as printed by
/// `--help`.
pub fn render_help(subcommand: Option<&str>) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match subcommand {
        Some(name) => cmd
            .find_subcommand_mut(name)
            .expect("known subcommand")
            .render_long_help()
            .to_string(),
        None => cmd.render_long_help().to_string(),
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
