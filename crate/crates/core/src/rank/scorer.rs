use std::collections::BTreeMap;

use crate::corpus::{tokenize, Language, Sentence};
use crate::error::{Error, Result};

/// Sentence-level disfluency: higher means less fluent.
pub trait Disfluency: Send + Sync {
    fn id(&self) -> String;

    fn disfluency(&self, sentence: &Sentence) -> Result<f64>;
}

impl<D: Disfluency + ?Sized> Disfluency for std::sync::Arc<D> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn disfluency(&self, sentence: &Sentence) -> Result<f64> {
        (**self).disfluency(sentence)
    }
}

impl<D: Disfluency + ?Sized> Disfluency for Box<D> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn disfluency(&self, sentence: &Sentence) -> Result<f64> {
        (**self).disfluency(sentence)
    }
}

fn stub_key(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Explicit sentence-to-value table, keyed on the token sequence so that
/// spacing differences in the lookup text do not matter.
#[derive(Clone, Debug, Default)]
pub struct StubScorer {
    table: BTreeMap<String, f64>,
    default: Option<f64>,
}

impl StubScorer {
    pub fn new() -> Self {
        StubScorer::default()
    }

    /// Value for sentences missing from the table; without one they error.
    pub fn with_default(mut self, value: f64) -> Self {
        self.default = Some(value);
        self
    }

    pub fn with(mut self, text: &str, language: Language, value: f64) -> Self {
        self.insert(text, language, value);
        self
    }

    pub fn insert(&mut self, text: &str, language: Language, value: f64) {
        self.table
            .insert(stub_key(&tokenize(text, language).tokens), value);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Disfluency for StubScorer {
    fn id(&self) -> String {
        "stub".into()
    }

    fn disfluency(&self, sentence: &Sentence) -> Result<f64> {
        let key = stub_key(&sentence.tokens);
        self.table
            .get(&key)
            .copied()
            .or(self.default)
            .ok_or(Error::MissingScore(key))
    }
}

/// Wraps a similarity-style scorer (higher = better) as a disfluency.
pub struct Negated<S>(pub S);

impl<S: Disfluency> Disfluency for Negated<S> {
    fn id(&self) -> String {
        format!("neg-{}", self.0.id())
    }

    fn disfluency(&self, sentence: &Sentence) -> Result<f64> {
        self.0.disfluency(sentence).map(|v| -v)
    }
}

/// `f(s) = scale * inner(s) + offset`.
pub struct Affine<S> {
    pub inner: S,
    pub scale: f64,
    pub offset: f64,
}

impl<S: Disfluency> Disfluency for Affine<S> {
    fn id(&self) -> String {
        format!("affine-{}", self.inner.id())
    }

    fn disfluency(&self, sentence: &Sentence) -> Result<f64> {
        Ok(self.scale * self.inner.disfluency(sentence)? + self.offset)
    }
}

/// Same value for every sentence.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl Disfluency for ConstantScorer {
    fn id(&self) -> String {
        "constant".into()
    }

    fn disfluency(&self, _: &Sentence) -> Result<f64> {
        Ok(self.0)
    }
}
