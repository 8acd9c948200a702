//! Run configuration loaded from JSON.
//!
//! Relative paths are resolved against the directory holding the config
//! file. API keys never appear here; remote sections name the environment
//! variable that holds them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assoc::TrainConfig;
use crate::corpus::Language;
use crate::error::{Error, Result};
use crate::merge::{default_displacy_labels, MergeConfig};
use crate::mining::MiningConfig;
use crate::providers::RemoteConfig;
use crate::rank::Ranker;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub pairs: Option<PathBuf>,
    /// Corpus mined for associations and used to train the classifier;
    /// `pairs` when unset.
    pub mining_pairs: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    /// Pre-trained classifier; trained from the mining corpus when unset.
    pub model: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Language-model text, one sentence per line; the corpus targets when
    /// unset.
    pub lm_text: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageSection {
    pub mining: Option<MiningConfig>,
    pub merge: Option<MergeConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerConfig {
    Ngram {
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_k")]
        k: f64,
    },
    Remote(RemoteConfig),
    /// JSON Lines of `{"text", "value"}`.
    Stub {
        path: PathBuf,
    },
}

fn default_order() -> usize {
    3
}

fn default_k() -> f64 {
    1.0
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig::Ngram {
            order: default_order(),
            k: default_k(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    Hash {
        #[serde(default)]
        seed: u64,
    },
    /// JSON Lines of `{"text", "vector"}`; unknown texts fall back to hash
    /// vectors when `hash_fallback` is set.
    File {
        path: PathBuf,
        #[serde(default)]
        hash_fallback: bool,
    },
    Remote(RemoteConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingSource,
    /// Dimension the provider produces.
    pub dim: usize,
    /// Truncation target fed to the classifier.
    pub mrl_dim: Option<usize>,
    /// On-disk embedding cache directory.
    pub cache_dir: Option<PathBuf>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: EmbeddingSource::Hash { seed: 0 },
            dim: 256,
            mrl_dim: None,
            cache_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub language: Language,
    pub seed: u64,
    pub paths: Paths,
    /// Per-language overrides keyed by language tag.
    pub languages: BTreeMap<Language, LanguageSection>,
    pub train: TrainConfig,
    pub scorer: ScorerConfig,
    pub embedding: EmbeddingConfig,
    pub rankers: Vec<Ranker>,
    /// Drop pairs with fewer edits before ranking.
    pub min_edits: usize,
    pub displacy_labels: BTreeSet<String>,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            language: Language::En,
            seed: 0,
            paths: Paths::default(),
            languages: BTreeMap::new(),
            train: TrainConfig::default(),
            scorer: ScorerConfig::default(),
            embedding: EmbeddingConfig::default(),
            rankers: Ranker::ALL.to_vec(),
            min_edits: 0,
            displacy_labels: default_displacy_labels(),
            jobs: 1,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn resolve_remote(base: &Path, r: &mut RemoteConfig) {
    resolve(base, &mut r.cache_dir);
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for field in [
            &mut p.pairs,
            &mut p.mining_pairs,
            &mut p.parses,
            &mut p.model,
            &mut p.labels,
            &mut p.lm_text,
            &mut p.output_dir,
        ] {
            resolve(base, field);
        }
        resolve(base, &mut self.embedding.cache_dir);
        match &mut self.embedding.provider {
            EmbeddingSource::File { path, .. } => {
                let mut o = Some(path.clone());
                resolve(base, &mut o);
                *path = o.expect("set above");
            }
            EmbeddingSource::Remote(r) => resolve_remote(base, r),
            EmbeddingSource::Hash { .. } => {}
        }
        match &mut self.scorer {
            ScorerConfig::Stub { path } => {
                let mut o = Some(path.clone());
                resolve(base, &mut o);
                *path = o.expect("set above");
            }
            ScorerConfig::Remote(r) => resolve_remote(base, r),
            ScorerConfig::Ngram { .. } => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.mining().validate()?;
        self.merge().validate()?;
        if self.embedding.dim == 0 {
            return Err(Error::InvalidInput("embedding dim must be positive".into()));
        }
        if let Some(m) = self.embedding.mrl_dim {
            if m == 0 || m > self.embedding.dim {
                return Err(Error::InvalidInput(format!(
                    "mrl_dim {m} must lie in 1..={}",
                    self.embedding.dim
                )));
            }
        }
        if self.rankers.is_empty() {
            return Err(Error::InvalidInput("no rankers selected".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidInput("jobs must be at least 1".into()));
        }
        if let ScorerConfig::Remote(r) = &self.scorer {
            r.validate()?;
        }
        if let EmbeddingSource::Remote(r) = &self.embedding.provider {
            r.validate()?;
        }
        Ok(())
    }

    pub fn mining(&self) -> MiningConfig {
        self.languages
            .get(&self.language)
            .and_then(|s| s.mining.clone())
            .unwrap_or_else(|| MiningConfig::for_language(self.language))
    }

    pub fn merge(&self) -> MergeConfig {
        self.languages
            .get(&self.language)
            .and_then(|s| s.merge.clone())
            .unwrap_or_else(|| MergeConfig::for_language(self.language))
    }

    /// Classifier input dimension after truncation.
    pub fn working_dim(&self) -> usize {
        self.embedding.mrl_dim.unwrap_or(self.embedding.dim)
    }
}
