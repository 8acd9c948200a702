//! Add-k smoothed word n-gram language model used as an offline perplexity
//! scorer.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::scorer::Disfluency;
use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: HashMap<String, u64>,
}

/// Predicted vocabulary is the training tokens plus `</s>` and `<unk>`;
/// `p(w | ctx) = (c(ctx, w) + k) / (c(ctx) + k * V)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NGramLM {
    order: usize,
    k: f64,
    vocab: BTreeSet<String>,
    contexts: HashMap<Vec<String>, ContextCounts>,
}

impl NGramLM {
    pub fn train(sentences: &[Sentence], order: usize, k: f64) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidInput(
                "cannot train an n-gram model on an empty corpus".into(),
            ));
        }
        let mut lm = Self::empty(order, k)?;
        for s in sentences {
            lm.vocab.extend(s.tokens.iter().cloned());
        }
        for s in sentences {
            let padded = lm.pad(&s.tokens);
            for end in order - 1..padded.len() {
                let ctx = padded[end + 1 - order..end].to_vec();
                let entry = lm.contexts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(padded[end].clone()).or_default() += 1;
            }
        }
        Ok(lm)
    }

    /// An untrained model over `words` (plus `</s>` and `<unk>`): every
    /// prediction is uniform over that vocabulary.
    pub fn uniform(order: usize, k: f64, words: &[&str]) -> Result<Self> {
        let mut lm = Self::empty(order, k)?;
        lm.vocab.extend(words.iter().map(|w| w.to_string()));
        Ok(lm)
    }

    fn empty(order: usize, k: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput(
                "n-gram order must be at least 1".into(),
            ));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "smoothing constant must be positive, got {k}"
            )));
        }
        Ok(NGramLM {
            order,
            k,
            vocab: [EOS, UNK].into_iter().map(String::from).collect(),
            contexts: HashMap::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(String::as_str)
    }

    fn map_token(&self, t: &str) -> String {
        if self.vocab.contains(t) && t != EOS {
            t.to_string()
        } else if t == EOS {
            EOS.to_string()
        } else {
            UNK.to_string()
        }
    }

    fn pad(&self, tokens: &[String]) -> Vec<String> {
        let mut padded = vec![BOS.to_string(); self.order - 1];
        padded.extend(tokens.iter().map(|t| self.map_token(t)));
        padded.push(EOS.to_string());
        padded
    }

    /// Conditional probability of `word` after the last `order - 1` tokens of
    /// `context` (already vocabulary-mapped or padded).
    pub fn prob(&self, context: &[String], word: &str) -> f64 {
        let n = self.order - 1;
        let ctx = &context[context.len().saturating_sub(n)..];
        let word = self.map_token(word);
        let v = self.vocab.len() as f64;
        match self.contexts.get(ctx) {
            Some(c) => {
                let cw = c.next.get(&word).copied().unwrap_or(0) as f64;
                (cw + self.k) / (c.total as f64 + self.k * v)
            }
            None => 1.0 / v,
        }
    }

    pub fn log_prob(&self, tokens: &[String]) -> (f64, usize) {
        let padded = self.pad(tokens);
        let n = self.order - 1;
        let mut total = 0.0;
        for end in n..padded.len() {
            total += self.prob(&padded[end - n..end], &padded[end]).ln();
        }
        (total, padded.len() - n)
    }

    /// `exp(-(1/m) Σ log p)` over the `m` tokens including `</s>`.
    pub fn perplexity(&self, tokens: &[String]) -> f64 {
        let (lp, m) = self.log_prob(tokens);
        (-lp / m as f64).exp()
    }
}

impl Disfluency for NGramLM {
    fn id(&self) -> String {
        format!("ngram{}-k{}", self.order, self.k)
    }

    fn disfluency(&self, sentence: &Sentence) -> Result<f64> {
        Ok(self.perplexity(&sentence.tokens))
    }
}
