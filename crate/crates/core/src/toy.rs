//! Synthetic corpus with planted coupled edits and planted labels.
//!
//! Every source sentence carries three errors relative to its target:
//!
//! * a misspelled phrasal verb (never seen by the language model),
//! * the wrong particle for that verb, which the verb determines,
//! * a rarer synonym for an adjective far to the right.
//!
//! The first two are labeled `corrected`, the synonym swap `reasonable`.
//! The language-model text over-represents the wrong particle in object
//! context, so fixing the particle alone looks harmful to a model that
//! scores edits in isolation.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{
    EmbeddingConfig, EmbeddingSource, LanguageSection, PipelineConfig, ScorerConfig,
};
use crate::corpus::{write_pairs, Language, SentencePair};
use crate::error::{Error, Result};
use crate::eval::{EditLabel, LabelRecord};
use crate::mining::MiningConfig;
use crate::pipeline::{create, write_json, write_jsonl};
use crate::seeds::substream;

/// (target verb, misspelled verb, particle)
pub const VERBS: [(&str, &str, &str); 6] = [
    ("picked", "pickd", "up"),
    ("turned", "turnd", "off"),
    ("gave", "gaved", "away"),
    ("looked", "lookt", "over"),
    ("put", "putted", "on"),
    ("set", "setted", "aside"),
];
pub const WRONG_PARTICLE: &str = "of";
/// (target adjective, rarer synonym in the source)
pub const ADJECTIVES: [(&str, &str); 4] = [
    ("big", "large"),
    ("happy", "glad"),
    ("quick", "rapid"),
    ("quiet", "silent"),
];
const SUBJECTS: [&str; 5] = ["she", "he", "they", "we", "i"];
const OBJECTS: [&str; 5] = ["box", "book", "coat", "plan", "radio"];
const TIMES: [&str; 4] = ["yesterday", "today", "again", "early"];
const CLAUSES: [&str; 4] = [
    "and later that day we all walked to the",
    "and after the long meeting they went to the",
    "but in the end nobody really wanted the",
    "so before the evening we quickly cleaned the",
];
const NOUNS: [&str; 4] = ["house", "garden", "dog", "room"];

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub pairs: Vec<SentencePair>,
    pub labels: Vec<LabelRecord>,
    /// Language-model training text, one sentence per line.
    pub lm_text: Vec<String>,
}

/// `n` pairs named `<prefix>-<i>`, with LM text made of the clean targets
/// plus `n` filler sentences using the wrong particle after an object.
pub fn generate(n: usize, seed: u64, prefix: &str) -> ToyCorpus {
    let mut rng = substream(seed, &format!("toy:{prefix}"));
    let mut pairs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut lm_text = Vec::with_capacity(2 * n);
    for i in 0..n {
        let pick =
            |rng: &mut rand_chacha::ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).unwrap();
        let (verb, bad_verb, particle) = VERBS[rng.gen_range(0..VERBS.len())];
        let (adj, syn) = ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())];
        let subj = pick(&mut rng, &SUBJECTS);
        let obj = pick(&mut rng, &OBJECTS);
        let time = pick(&mut rng, &TIMES);
        let clause = pick(&mut rng, &CLAUSES);
        let noun = pick(&mut rng, &NOUNS);
        let target = format!("{subj} {verb} the {obj} {particle} {time} , {clause} {adj} {noun} .");
        let source = format!(
            "{subj} {bad_verb} the {obj} {WRONG_PARTICLE} {time} , {clause} {syn} {noun} ."
        );
        let id = format!("{prefix}-{i:04}");
        pairs.push(SentencePair::new(
            id.clone(),
            &source,
            &target,
            Language::En,
        ));
        labels.push(LabelRecord {
            id,
            labels: vec![
                EditLabel::Corrected,
                EditLabel::Corrected,
                EditLabel::Reasonable,
            ],
        });
        lm_text.push(target);

        let subj = pick(&mut rng, &SUBJECTS);
        let obj = pick(&mut rng, &OBJECTS);
        let time = pick(&mut rng, &TIMES);
        let clause = pick(&mut rng, &CLAUSES);
        let (adj, syn) = ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())];
        let noun = pick(&mut rng, &NOUNS);
        // the rarer synonym appears occasionally so it is known but unlikely
        let a = if rng.gen_bool(0.1) { syn } else { adj };
        lm_text.push(format!(
            "{subj} saw the {obj} {WRONG_PARTICLE} {time} , {clause} {a} {noun} ."
        ));
    }
    ToyCorpus {
        pairs,
        labels,
        lm_text,
    }
}

/// Offline configuration for a toy run: trigram LM, hash embeddings and a
/// small classifier trained for longer at a higher rate than the defaults.
pub fn toy_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed,
        scorer: ScorerConfig::Ngram { order: 3, k: 0.1 },
        embedding: EmbeddingConfig {
            provider: EmbeddingSource::Hash { seed },
            dim: 32,
            mrl_dim: None,
            cache_dir: None,
        },
        ..PipelineConfig::default()
    };
    // a handful of mined pairs: no held-out split, many small steps
    cfg.train.lr = 1e-2;
    cfg.train.epochs = 150;
    cfg.train.patience = 10;
    cfg.train.hidden = 32;
    cfg.train.dropout = 0.1;
    cfg.train.batch_size = 8;
    cfg.train.val_fraction = 0.0;
    cfg.languages.insert(
        Language::En,
        LanguageSection {
            mining: Some(MiningConfig {
                min_lift: 1.5,
                ..MiningConfig::default()
            }),
            merge: None,
        },
    );
    cfg
}

/// Writes a complete toy workspace (mining corpus, evaluation corpus,
/// labels, LM text and `config.json`) under `dir` and returns the config
/// path. Artifacts of a run land in `dir/out`.
pub fn write_workspace(dir: &Path, n_mine: usize, n_eval: usize, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mine = generate(n_mine, seed, "mine");
    let eval = generate(n_eval, seed, "eval");

    let write_corpus = |name: &str, pairs: &[SentencePair]| -> Result<()> {
        let path = dir.join(name);
        let mut out = create(&path)?;
        write_pairs(pairs, &mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&path, e))
    };
    write_corpus("mining.jsonl", &mine.pairs)?;
    write_corpus("pairs.jsonl", &eval.pairs)?;
    write_jsonl(&dir.join("labels.jsonl"), &eval.labels)?;
    let lm_path = dir.join("lm.txt");
    std::fs::write(&lm_path, mine.lm_text.join("\n") + "\n").map_err(|e| Error::io(&lm_path, e))?;

    let mut cfg = toy_config(seed);
    cfg.paths.pairs = Some("pairs.jsonl".into());
    cfg.paths.mining_pairs = Some("mining.jsonl".into());
    cfg.paths.labels = Some("labels.jsonl".into());
    cfg.paths.lm_text = Some("lm.txt".into());
    cfg.paths.output_dir = Some("out".into());
    let path = dir.join("config.json");
    write_json(&path, &cfg)?;
    Ok(path)
}
