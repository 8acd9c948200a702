//! Atomic edit extraction by token alignment, and realization of hypothesis
//! sentences from edit subsets.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Language, Sentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Insert,
    Delete,
    Substitute,
}

/// Half-open token interval, serialized as `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub op: EditOp,
    pub src_span: Span,
    pub tgt_span: Span,
    pub src_text: String,
    pub tgt_text: String,
}

impl Edit {
    pub fn target_tokens(&self, language: Language) -> Vec<String> {
        language.split_joined(&self.tgt_text)
    }

    fn check(&self) -> Result<()> {
        let ok = match self.op {
            EditOp::Insert => self.src_span.is_empty() && !self.tgt_span.is_empty(),
            EditOp::Delete => !self.src_span.is_empty() && self.tgt_span.is_empty(),
            EditOp::Substitute => !self.src_span.is_empty() && !self.tgt_span.is_empty(),
        };
        if ok
            && self.src_span.start <= self.src_span.end
            && self.tgt_span.start <= self.tgt_span.end
        {
            Ok(())
        } else {
            Err(Error::InvalidEdit(format!("{self:?}")))
        }
    }

    /// Human-readable `src → tgt` label.
    pub fn label(&self) -> String {
        let side = |t: &str| {
            if t.is_empty() {
                "∅".to_string()
            } else {
                t.to_string()
            }
        };
        format!("{} → {}", side(&self.src_text), side(&self.tgt_text))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSet {
    pub edits: Vec<Edit>,
}

impl EditSet {
    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Edit> {
        self.edits.iter()
    }

    /// Checks per-edit consistency, ordering and non-overlap.
    pub fn validate(&self) -> Result<()> {
        for e in &self.edits {
            e.check()?;
        }
        for w in self.edits.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.src_span.end > b.src_span.start || a.tgt_span.end > b.tgt_span.start {
                return Err(Error::InvalidEdit(format!(
                    "overlapping or unordered edits {:?} and {:?}",
                    a.label(),
                    b.label()
                )));
            }
        }
        Ok(())
    }

    /// Edits at the given indices, in set order.
    pub fn subset(&self, indices: &[usize]) -> Vec<Edit> {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter().map(|i| self.edits[i].clone()).collect()
    }

    /// Edits whose index is not in `excluded`.
    pub fn complement(&self, excluded: &[usize]) -> Vec<Edit> {
        self.edits
            .iter()
            .enumerate()
            .filter(|(i, _)| !excluded.contains(i))
            .map(|(_, e)| e.clone())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Match,
    Substitute,
    Delete,
    Insert,
}

/// Token-level minimum edit distance alignment with unit costs. The backtrace
/// prefers match, then substitute, then delete, then insert; contiguous runs of
/// non-match steps become one atomic edit.
pub fn extract_edits(source: &Sentence, target: &Sentence) -> EditSet {
    let s = &source.tokens;
    let t = &target.tokens;
    let (n, m) = (s.len(), t.len());
    let width = m + 1;
    let mut d = vec![0u32; (n + 1) * width];
    for i in 0..=n {
        d[i * width] = i as u32;
    }
    for (j, cell) in d.iter_mut().enumerate().take(m + 1) {
        *cell = j as u32;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * width + j - 1] + u32::from(s[i - 1] != t[j - 1]);
            let up = d[(i - 1) * width + j] + 1;
            let left = d[i * width + j - 1] + 1;
            d[i * width + j] = diag.min(up).min(left);
        }
    }

    let mut steps = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * width + j];
        let step = if i > 0 && j > 0 && s[i - 1] == t[j - 1] && here == d[(i - 1) * width + j - 1] {
            Step::Match
        } else if i > 0 && j > 0 && here == d[(i - 1) * width + j - 1] + 1 {
            Step::Substitute
        } else if i > 0 && here == d[(i - 1) * width + j] + 1 {
            Step::Delete
        } else {
            Step::Insert
        };
        match step {
            Step::Match | Step::Substitute => {
                i -= 1;
                j -= 1;
            }
            Step::Delete => i -= 1,
            Step::Insert => j -= 1,
        }
        steps.push(step);
    }
    steps.reverse();

    let lang = source.language;
    let mut edits = Vec::new();
    let (mut si, mut ti) = (0, 0);
    let mut run: Option<(usize, usize)> = None;
    let close = |run: (usize, usize), si: usize, ti: usize, edits: &mut Vec<Edit>| {
        let src_span = Span::new(run.0, si);
        let tgt_span = Span::new(run.1, ti);
        let op = match (src_span.is_empty(), tgt_span.is_empty()) {
            (true, false) => EditOp::Insert,
            (false, true) => EditOp::Delete,
            _ => EditOp::Substitute,
        };
        edits.push(Edit {
            op,
            src_span,
            tgt_span,
            src_text: lang.join(&s[run.0..si]),
            tgt_text: lang.join(&t[run.1..ti]),
        });
    };
    for step in steps {
        if step == Step::Match {
            if let Some(r) = run.take() {
                close(r, si, ti, &mut edits);
            }
        } else if run.is_none() {
            run = Some((si, ti));
        }
        match step {
            Step::Match | Step::Substitute => {
                si += 1;
                ti += 1;
            }
            Step::Delete => si += 1,
            Step::Insert => ti += 1,
        }
    }
    if let Some(r) = run {
        close(r, si, ti, &mut edits);
    }
    EditSet { edits }
}

/// Applies a subset of edits to the source, replacing each source span with
/// the edit's target tokens.
pub fn apply_edits(source: &Sentence, subset: &[Edit]) -> Result<Sentence> {
    let mut ordered: Vec<&Edit> = subset.iter().collect();
    ordered.sort_by_key(|e| (e.src_span.start, e.src_span.end, e.tgt_span.start));
    for e in &ordered {
        if e.src_span.end > source.len() || e.src_span.start > e.src_span.end {
            return Err(Error::InvalidEdit(format!(
                "source span [{}, {}) exceeds sentence length {}",
                e.src_span.start,
                e.src_span.end,
                source.len()
            )));
        }
    }
    for w in ordered.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.src_span.end > b.src_span.start || a.src_span == b.src_span {
            return Err(Error::InvalidEdit(format!(
                "overlapping edits {:?} and {:?}",
                a.label(),
                b.label()
            )));
        }
    }
    let mut tokens = source.tokens.clone();
    for e in ordered.iter().rev() {
        let replacement = e.target_tokens(source.language);
        tokens.splice(e.src_span.start..e.src_span.end, replacement);
    }
    Ok(Sentence::from_tokens(tokens, source.language))
}

/// The source with every edit of `set` applied except `edit`.
pub fn leave_one_out(source: &Sentence, set: &EditSet, edit: &Edit) -> Result<Sentence> {
    let pos =
        set.edits.iter().position(|e| e == edit).ok_or_else(|| {
            Error::InvalidEdit(format!("{:?} is not in the edit set", edit.label()))
        })?;
    apply_edits(source, &set.complement(&[pos]))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditRecord {
    pub id: String,
    pub edits: Vec<Edit>,
}

pub fn write_edit_records(records: &[EditRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn en(s: &str) -> Sentence {
        tokenize(s, Language::En)
    }

    #[test]
    fn extracts_table7_pair() {
        let src = en("I have finish my task .");
        let tgt = en("I have finished my homework .");
        let set = extract_edits(&src, &tgt);
        assert_eq!(set.len(), 2);
        assert_eq!(set.edits[0].op, EditOp::Substitute);
        assert_eq!(set.edits[0].src_text, "finish");
        assert_eq!(set.edits[0].tgt_text, "finished");
        assert_eq!(set.edits[1].src_text, "task");
        assert_eq!(set.edits[1].tgt_text, "homework");
        set.validate().unwrap();

        assert_eq!(apply_edits(&src, &set.edits).unwrap().text(), tgt.text());
        assert_eq!(apply_edits(&src, &[]).unwrap().text(), src.text());
        assert_eq!(
            apply_edits(&src, &set.edits[..1]).unwrap().text(),
            "I have finished my task ."
        );
        assert_eq!(
            leave_one_out(&src, &set, &set.edits[0]).unwrap().text(),
            "I have finish my homework ."
        );
    }

    #[test]
    fn extracts_german_pair() {
        let src = tokenize("Er fang die Arbeit am .", Language::De);
        let tgt = tokenize("Er fängt die Arbeit an .", Language::De);
        let set = extract_edits(&src, &tgt);
        let pairs: Vec<_> = set
            .iter()
            .map(|e| (e.op, e.src_text.as_str(), e.tgt_text.as_str()))
            .collect();
        assert_eq!(
            pairs,
            [
                (EditOp::Substitute, "fang", "fängt"),
                (EditOp::Substitute, "am", "an")
            ]
        );
    }

    #[test]
    fn identical_sentences_have_no_edits() {
        let s = en("nothing to fix here .");
        assert!(extract_edits(&s, &s).is_empty());
    }

    #[test]
    fn insert_and_delete_ops() {
        let set = extract_edits(&en("a b c d"), &en("a x b c d"));
        assert_eq!(set.len(), 1);
        assert_eq!(set.edits[0].op, EditOp::Insert);
        assert_eq!(set.edits[0].src_span, Span::new(1, 1));
        assert_eq!(set.edits[0].tgt_span, Span::new(1, 2));

        let set = extract_edits(&en("a b c d"), &en("a c d"));
        assert_eq!(set.len(), 1);
        assert_eq!(set.edits[0].op, EditOp::Delete);
        assert_eq!(set.edits[0].tgt_span, Span::new(1, 1));

        // equal-cost alignments resolve to substitution
        let set = extract_edits(&en("a b c"), &en("a x b"));
        assert_eq!(set.len(), 1);
        assert_eq!(set.edits[0].op, EditOp::Substitute);
        assert_eq!(set.edits[0].src_text, "b c");
        set.validate().unwrap();
    }

    #[test]
    fn leave_one_out_matches_reapplication() {
        let src = en("a b c d e f g");
        let tgt = en("a B c D e F g");
        let set = extract_edits(&src, &tgt);
        assert_eq!(set.len(), 3);
        let middle = &set.edits[1];
        let expected = apply_edits(&src, &[set.edits[0].clone(), set.edits[2].clone()]).unwrap();
        assert_eq!(leave_one_out(&src, &set, middle).unwrap(), expected);

        let single = extract_edits(&en("x y"), &en("x z"));
        assert_eq!(
            leave_one_out(&en("x y"), &single, &single.edits[0])
                .unwrap()
                .text(),
            "x y"
        );
    }

    #[test]
    fn apply_rejects_bad_subsets() {
        let src = en("a b");
        let set = extract_edits(&src, &en("a c"));
        let dup = vec![set.edits[0].clone(), set.edits[0].clone()];
        assert!(apply_edits(&src, &dup).is_err());
        let mut far = set.edits[0].clone();
        far.src_span = Span::new(5, 6);
        assert!(apply_edits(&src, &[far]).is_err());
        let foreign = extract_edits(&en("q"), &en("r")).edits[0].clone();
        assert!(leave_one_out(&src, &set, &foreign).is_err());
    }

    #[test]
    fn json_shape() {
        let set = extract_edits(&en("a b"), &en("a c"));
        let v = serde_json::to_value(&set.edits[0]).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"op":"substitute","src_span":[1,2],"tgt_span":[1,2],"src_text":"b","tgt_text":"c"})
        );
    }

    #[test]
    fn chinese_edits() {
        let src = tokenize("我爱你们", Language::Zh);
        let tgt = tokenize("我很爱你", Language::Zh);
        let set = extract_edits(&src, &tgt);
        assert_eq!(apply_edits(&src, &set.edits).unwrap().tokens, tgt.tokens);
    }
}
