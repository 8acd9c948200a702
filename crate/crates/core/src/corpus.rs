//! Parallel GEC corpora: sentence pairs, tokenization, dependency parses and
//! summary statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edits::EditSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
    De,
    Es,
    Other,
}

impl Language {
    /// Parses a language tag. Unknown tags map to [`Language::Other`]; the
    /// second value is false in that case so callers can warn.
    pub fn parse(tag: &str) -> (Language, bool) {
        match tag.trim().to_ascii_lowercase().as_str() {
            "en" => (Language::En, true),
            "zh" => (Language::Zh, true),
            "de" => (Language::De, true),
            "es" => (Language::Es, true),
            "other" => (Language::Other, true),
            _ => (Language::Other, false),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
            Language::De => "de",
            Language::Es => "es",
            Language::Other => "other",
        }
    }

    /// String placed between tokens when rebuilding text.
    pub fn joiner(self) -> &'static str {
        match self {
            Language::Zh => "",
            _ => " ",
        }
    }

    pub fn join(self, tokens: &[String]) -> String {
        tokens.join(self.joiner())
    }

    /// Inverse of [`Language::join`] for token lists produced by [`tokenize`].
    pub fn split_joined(self, text: &str) -> Vec<String> {
        match self {
            Language::Zh => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
            _ => text.split_whitespace().map(String::from).collect(),
        }
    }

    pub fn is_latin(self) -> bool {
        !matches!(self, Language::Zh)
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub language: Language,
    pub raw: String,
}

impl Sentence {
    pub fn from_tokens(tokens: Vec<String>, language: Language) -> Self {
        let raw = language.join(&tokens);
        Sentence {
            tokens,
            language,
            raw,
        }
    }

    /// Canonical text: tokens joined with the language joiner.
    pub fn text(&self) -> String {
        self.language.join(&self.tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub id: String,
    pub source: Sentence,
    pub target: Sentence,
    pub language: Language,
}

impl SentencePair {
    pub fn new(id: impl Into<String>, source: &str, target: &str, language: Language) -> Self {
        SentencePair {
            id: id.into(),
            source: tokenize(source, language),
            target: tokenize(target, language),
            language,
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '¿' | '¡' | '«' | '»' | '“' | '”' | '‘' | '’' | '„' | '…' | '–' | '—' | '·'
        )
}

/// Hyphens and apostrophes between two alphanumerics stay inside the word.
fn is_word_internal(c: char) -> bool {
    matches!(c, '-' | '\'' | '’')
}

/// Splits text into tokens. Latin scripts split on whitespace and
/// punctuation; Chinese yields one token per non-whitespace character.
pub fn tokenize(text: &str, language: Language) -> Sentence {
    let tokens = if language.is_latin() {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if c.is_whitespace() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            } else if is_punct(c) {
                let internal = is_word_internal(c)
                    && !current.is_empty()
                    && i + 1 < chars.len()
                    && chars[i + 1].is_alphanumeric();
                if internal {
                    current.push(c);
                } else {
                    if !current.is_empty() {
                        tokens.push(std::mem::take(&mut current));
                    }
                    tokens.push(c.to_string());
                }
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    } else {
        language.split_joined(text)
    };
    Sentence {
        tokens,
        language,
        raw: text.to_string(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    id: String,
    source: String,
    target: String,
    lang: String,
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(BufReader::new(file), path)
}

pub fn read_pairs(reader: impl BufRead, path: &Path) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let (language, known) = Language::parse(&record.lang);
        if !known {
            log::warn!(
                "{}:{}: unknown language tag {:?}, treating as \"other\"",
                path.display(),
                idx + 1,
                record.lang
            );
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        pairs.push(SentencePair {
            id: record.id,
            source: tokenize(&record.source, language),
            target: tokenize(&record.target, language),
            language,
        });
    }
    Ok(pairs)
}

pub fn write_pairs(pairs: &[SentencePair], mut out: impl Write) -> std::io::Result<()> {
    for pair in pairs {
        let record = PairRecord {
            id: pair.id.clone(),
            source: pair.source.raw.clone(),
            target: pair.target.raw.clone(),
            lang: pair.language.as_str().to_string(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Dependency parse of one sentence. `heads[i]` is the 1-based head of token
/// `i + 1`, with 0 marking the root, as in CoNLL-U.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyTree {
    pub heads: Vec<usize>,
    pub relations: Vec<String>,
}

impl DependencyTree {
    pub fn new(heads: Vec<usize>, relations: Vec<String>, id: &str) -> Result<Self> {
        let tree = DependencyTree { heads, relations };
        tree.validate(id)?;
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn validate(&self, id: &str) -> Result<()> {
        let invalid = |message: String| Error::InvalidTree {
            id: id.to_string(),
            message,
        };
        let n = self.heads.len();
        if self.relations.len() != n {
            return Err(invalid(format!(
                "{} heads but {} relations",
                n,
                self.relations.len()
            )));
        }
        if n == 0 {
            return Err(invalid("empty tree".into()));
        }
        if let Some((i, &h)) = self.heads.iter().enumerate().find(|(_, &h)| h > n) {
            return Err(invalid(format!(
                "head index {h} of token {} out of range 0..={n}",
                i + 1
            )));
        }
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(invalid(format!("expected exactly one root, found {roots}")));
        }
        // Walk up from every token; a path longer than n revisits a node.
        for start in 1..=n {
            let mut node = start;
            let mut steps = 0;
            while node != 0 {
                node = self.heads[node - 1];
                steps += 1;
                if steps > n {
                    return Err(invalid(format!("cycle through token {start}")));
                }
            }
        }
        Ok(())
    }

    /// Undirected adjacency over 0-based token positions.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.heads.len()];
        for (i, &h) in self.heads.iter().enumerate() {
            if h > 0 {
                adj[i].push(h - 1);
                adj[h - 1].push(i);
            }
        }
        adj
    }

    /// Hop counts from the nearest of `sources` (0-based) to every token.
    pub fn distances_from(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut dist = vec![None; self.heads.len()];
        let mut queue = std::collections::VecDeque::new();
        for &s in sources {
            if s < dist.len() && dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Reads CoNLL-U parses keyed by their `# sent_id` comment. Multiword-token
/// ranges and empty nodes are skipped.
pub fn load_conllu(path: impl AsRef<Path>) -> Result<BTreeMap<String, DependencyTree>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_conllu(BufReader::new(file), path)
}

pub fn read_conllu(reader: impl BufRead, path: &Path) -> Result<BTreeMap<String, DependencyTree>> {
    struct Block {
        id: Option<String>,
        start_line: usize,
        heads: Vec<usize>,
        relations: Vec<String>,
    }

    fn finish(
        block: Block,
        path: &Path,
        trees: &mut BTreeMap<String, DependencyTree>,
    ) -> Result<()> {
        if block.heads.is_empty() && block.id.is_none() {
            return Ok(());
        }
        let id = block.id.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: block.start_line,
            message: "sentence block without a sent_id comment".into(),
        })?;
        let tree = DependencyTree::new(block.heads, block.relations, &id)?;
        if trees.insert(id.clone(), tree).is_some() {
            return Err(Error::DuplicateId(id));
        }
        Ok(())
    }

    let new_block = |line| Block {
        id: None,
        start_line: line,
        heads: Vec::new(),
        relations: Vec::new(),
    };

    let mut trees = BTreeMap::new();
    let mut block = new_block(1);
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            let done = std::mem::replace(&mut block, new_block(lineno + 1));
            finish(done, path, &mut trees)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    block.id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 8 {
            return Err(parse_err(format!(
                "expected 10 tab-separated fields, found {}",
                fields.len()
            )));
        }
        if fields[0].contains('-') || fields[0].contains('.') {
            continue;
        }
        let token_id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad token id {:?}", fields[0])))?;
        if token_id != block.heads.len() + 1 {
            return Err(parse_err(format!(
                "token id {token_id} out of sequence (expected {})",
                block.heads.len() + 1
            )));
        }
        let head: usize = fields[6]
            .parse()
            .map_err(|_| parse_err(format!("bad head {:?}", fields[6])))?;
        block.heads.push(head);
        block.relations.push(fields[7].to_string());
    }
    finish(block, path, &mut trees)?;
    Ok(trees)
}

/// Writes trees in a minimal CoNLL-U layout, using `forms` for the FORM column
/// when available.
pub fn write_conllu(
    trees: &[(String, DependencyTree, Vec<String>)],
    mut out: impl Write,
) -> std::io::Result<()> {
    for (id, tree, forms) in trees {
        writeln!(out, "# sent_id = {id}")?;
        for (i, (&head, rel)) in tree.heads.iter().zip(&tree.relations).enumerate() {
            let form = forms.get(i).map(String::as_str).unwrap_or("_");
            writeln!(out, "{}\t{form}\t_\t_\t_\t_\t{head}\t{rel}\t_\t_", i + 1)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Keeps the pairs whose edit set has at least `n` edits.
pub fn filter_min_edits<F>(pairs: &[SentencePair], n: usize, extractor: F) -> Vec<SentencePair>
where
    F: Fn(&Sentence, &Sentence) -> EditSet,
{
    pairs
        .iter()
        .filter(|p| extractor(&p.source, &p.target).len() >= n)
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub avg_len: f64,
    pub avg_edits: f64,
}

pub fn corpus_stats<F>(pairs: &[SentencePair], extractor: F) -> Result<CorpusStats>
where
    F: Fn(&Sentence, &Sentence) -> EditSet,
{
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "corpus statistics of an empty corpus".into(),
        ));
    }
    let n = pairs.len() as f64;
    let total_len: usize = pairs.iter().map(|p| p.target.len()).sum();
    let total_edits: usize = pairs
        .iter()
        .map(|p| extractor(&p.source, &p.target).len())
        .sum();
    Ok(CorpusStats {
        sentence_count: pairs.len(),
        avg_len: total_len as f64 / n,
        avg_edits: total_edits as f64 / n,
    })
}
