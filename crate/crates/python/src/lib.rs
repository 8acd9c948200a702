//! Python bindings: edit extraction, the n-gram scorer, ranking, metrics
//! and the offline pipeline.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use editimpact_core::config::PipelineConfig;
use editimpact_core::corpus::{tokenize, Language, Sentence};
use editimpact_core::edits::{self, EditOp, EditSet};
use editimpact_core::eval::{self, EditLabel, EvalConfig, LabeledRanking};
use editimpact_core::merge::EditGroup;
use editimpact_core::pipeline;
use editimpact_core::rank::{self, Disfluency, Ranker, StubScorer};
use editimpact_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Backend(_) | Error::Status { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn language(tag: &str) -> PyResult<Language> {
    match Language::parse(tag) {
        (lang, true) => Ok(lang),
        _ => Err(PyValueError::new_err(format!("unknown language {tag:?}"))),
    }
}

#[pyclass(frozen, get_all, module = "editimpact")]
struct Edit {
    op: String,
    src_start: usize,
    src_end: usize,
    tgt_start: usize,
    tgt_end: usize,
    src_text: String,
    tgt_text: String,
}

#[pymethods]
impl Edit {
    fn __repr__(&self) -> String {
        format!(
            "Edit({}, [{}, {}) {:?} -> [{}, {}) {:?})",
            self.op,
            self.src_start,
            self.src_end,
            self.src_text,
            self.tgt_start,
            self.tgt_end,
            self.tgt_text
        )
    }
}

impl From<&edits::Edit> for Edit {
    fn from(e: &edits::Edit) -> Self {
        let op = match e.op {
            EditOp::Insert => "insert",
            EditOp::Delete => "delete",
            EditOp::Substitute => "substitute",
        };
        Edit {
            op: op.into(),
            src_start: e.src_span.start,
            src_end: e.src_span.end,
            tgt_start: e.tgt_span.start,
            tgt_end: e.tgt_span.end,
            src_text: e.src_text.clone(),
            tgt_text: e.tgt_text.clone(),
        }
    }
}

fn edit_set(source: &str, target: &str, lang: &str) -> PyResult<(Sentence, EditSet)> {
    let lang = language(lang)?;
    let (s, t) = (tokenize(source, lang), tokenize(target, lang));
    let set = edits::extract_edits(&s, &t);
    Ok((s, set))
}

/// Token-level edits turning `source` into `target`.
#[pyfunction]
#[pyo3(signature = (source, target, lang = "en"))]
fn extract_edits(source: &str, target: &str, lang: &str) -> PyResult<Vec<Edit>> {
    let (_, set) = edit_set(source, target, lang)?;
    Ok(set.edits.iter().map(Edit::from).collect())
}

/// `source` with the edits at `indices` applied.
#[pyfunction]
#[pyo3(signature = (source, target, indices, lang = "en"))]
fn apply_edits(source: &str, target: &str, indices: Vec<usize>, lang: &str) -> PyResult<String> {
    let (s, set) = edit_set(source, target, lang)?;
    let chosen = indices
        .iter()
        .map(|&i| {
            set.edits
                .get(i)
                .cloned()
                .ok_or_else(|| PyValueError::new_err(format!("edit index {i} out of range")))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(edits::apply_edits(&s, &chosen).map_err(to_py)?.text())
}

/// Add-k smoothed n-gram language model scored by perplexity.
#[pyclass(frozen, module = "editimpact")]
struct NGramLM {
    inner: rank::NGramLM,
    lang: Language,
}

#[pymethods]
impl NGramLM {
    #[new]
    #[pyo3(signature = (sentences, lang = "en", order = 3, k = 0.1))]
    fn new(sentences: Vec<String>, lang: &str, order: usize, k: f64) -> PyResult<Self> {
        let lang = language(lang)?;
        let toks: Vec<Sentence> = sentences.iter().map(|s| tokenize(s, lang)).collect();
        let inner = rank::NGramLM::train(&toks, order, k).map_err(to_py)?;
        Ok(NGramLM { inner, lang })
    }

    fn perplexity(&self, text: &str) -> f64 {
        self.inner.perplexity(&tokenize(text, self.lang).tokens)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
}

fn groups_arg(groups: Option<Vec<Vec<usize>>>, k: usize) -> Vec<EditGroup> {
    match groups {
        Some(gs) => gs
            .into_iter()
            .map(|mut members| {
                members.sort_unstable();
                EditGroup { members }
            })
            .collect(),
        None => editimpact_core::merge::singletons(k),
    }
}

/// Ranks the edits of one pair. `scorer` is an `NGramLM` or a dict from
/// sentence text to disfluency. Returns `(members, delta)` per group, most
/// impactful first.
#[pyfunction]
#[pyo3(signature = (source, target, scorer, ranker = "ours", groups = None, lang = "en", seed = 0))]
fn rank_edits(
    source: &str,
    target: &str,
    scorer: &Bound<'_, PyAny>,
    ranker: &str,
    groups: Option<Vec<Vec<usize>>>,
    lang: &str,
    seed: u64,
) -> PyResult<Vec<(Vec<usize>, Option<f64>)>> {
    let (s, set) = edit_set(source, target, lang)?;
    let lm;
    let stub;
    let scorer: &dyn Disfluency = if let Ok(model) = scorer.cast::<NGramLM>() {
        lm = model.get();
        &lm.inner
    } else {
        let table: HashMap<String, f64> = scorer.extract()?;
        let lang = language(lang)?;
        stub = table
            .iter()
            .fold(StubScorer::new(), |acc, (text, v)| acc.with(text, lang, *v));
        &stub
    };
    let ranker: Ranker = ranker.parse().map_err(to_py)?;
    let out = match ranker {
        Ranker::Ours => rank::rank_ours(scorer, &s, &set, &groups_arg(groups, set.len())),
        Ranker::Vanilla => rank::rank_vanilla(scorer, &s, &set),
        Ranker::Greedy => rank::rank_greedy(scorer, &s, &set),
        Ranker::Random => Ok(rank::rank_random(&set, seed)),
        Ranker::Displacy => {
            return Err(PyValueError::new_err(
                "displacy needs parses; use run_pipeline",
            ));
        }
    }
    .map_err(to_py)?;
    Ok(out
        .groups
        .into_iter()
        .map(|g| (g.members, g.delta))
        .collect())
}

fn labeled(labels: Vec<bool>) -> PyResult<LabeledRanking> {
    let labels = labels
        .into_iter()
        .map(|c| {
            if c {
                EditLabel::Corrected
            } else {
                EditLabel::Reasonable
            }
        })
        .collect();
    LabeledRanking::new(labels).map_err(to_py)
}

/// Bounded score of a ranked label sequence (`True` = corrected).
#[pyfunction]
fn s_bound(labels: Vec<bool>) -> PyResult<f64> {
    Ok(eval::s_bound(&labeled(labels)?))
}

/// Inversion-based score of a ranked label sequence (`True` = corrected).
#[pyfunction]
#[pyo3(signature = (labels, epsilon = None))]
fn s_rank(labels: Vec<bool>, epsilon: Option<f64>) -> PyResult<f64> {
    let mut cfg = EvalConfig::default();
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    Ok(eval::s_rank(&labeled(labels)?, &cfg))
}

/// Pairs ranked, pairs mined, output directory, per-ranker scores.
type PipelineResult = (usize, usize, PathBuf, BTreeMap<String, (f64, f64, usize)>);

/// Runs the full pipeline from a JSON config. Returns the pair counts, the
/// output directory and, when labels are configured, per-ranker
/// `(s_bound, s_rank, n)`.
#[pyfunction]
#[pyo3(signature = (config, seed = None, output_dir = None))]
fn run_pipeline(
    py: Python<'_>,
    config: PathBuf,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
) -> PyResult<PipelineResult> {
    let mut cfg = PipelineConfig::load(&config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = output_dir {
        cfg.paths.output_dir = Some(dir);
    }
    let summary = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(to_py)?;
    let scores = summary
        .report
        .map(|r| {
            r.per_ranker
                .into_iter()
                .map(|(k, v)| {
                    (
                        k.to_string(),
                        (v.s_bound_mean, v.s_rank_mean, v.n_instances),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    Ok((
        summary.pairs,
        summary.mined_pairs,
        summary.output_dir,
        scores,
    ))
}

/// Writes a generated toy corpus with its config into `dir` and returns
/// the config path.
#[pyfunction]
#[pyo3(signature = (dir, n_mine = 400, n_eval = 200, seed = 7))]
fn write_toy_workspace(dir: PathBuf, n_mine: usize, n_eval: usize, seed: u64) -> PyResult<PathBuf> {
    editimpact_core::toy::write_workspace(&dir, n_mine, n_eval, seed).map_err(to_py)
}

#[pymodule]
fn editimpact(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Edit>()?;
    m.add_class::<NGramLM>()?;
    m.add_function(wrap_pyfunction!(extract_edits, m)?)?;
    m.add_function(wrap_pyfunction!(apply_edits, m)?)?;
    m.add_function(wrap_pyfunction!(rank_edits, m)?)?;
    m.add_function(wrap_pyfunction!(s_bound, m)?)?;
    m.add_function(wrap_pyfunction!(s_rank, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_toy_workspace, m)?)?;
    Ok(())
}
