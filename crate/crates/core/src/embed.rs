//! Text embeddings behind a uniform provider interface.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Fixed-length vector with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite vector entry at index {i}"
            )));
        }
        Ok(Vector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Vector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// Keeps the first `d` coordinates and rescales them to unit length. A zero
/// prefix stays zero.
pub fn truncate_mrl(v: &Vector, d: usize) -> Result<Vector> {
    if d == 0 || d > v.dim() {
        return Err(Error::InvalidInput(format!(
            "cannot truncate a {}-dimensional vector to {d}",
            v.dim()
        )));
    }
    let mut head = v.0[..d].to_vec();
    let norm = head.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        head.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(Vector(head))
}

/// Cosine similarity clamped to [-1, 1]; zero when either vector is zero.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    cosine_slices(u.as_slice(), v.as_slice())
}

pub(crate) fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier used to key caches.
    fn id(&self) -> String;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vector>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<Vector> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        (**self).embed_batch(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<Vector> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        (**self).embed_batch(texts)
    }
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn require_text(text: &str) -> Result<()> {
    if text.is_empty() {
        Err(Error::InvalidInput("cannot embed empty text".into()))
    } else {
        Ok(())
    }
}

/// Pseudo-random unit vectors seeded from a SHA-256 digest of the text.
#[derive(Clone, Debug)]
pub struct HashProvider {
    dim: usize,
    seed: u64,
}

impl HashProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(HashProvider { dim, seed })
    }

    fn vector(&self, text: &str) -> Vector {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut values: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|x| *x /= norm);
        }
        Vector(values)
    }
}

impl EmbeddingProvider for HashProvider {
    fn id(&self) -> String {
        format!("hash-d{}-s{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        require_text(text)?;
        Ok(self.vector(text))
    }
}

#[derive(Deserialize)]
struct FileEntry {
    text: String,
    vector: Vec<f64>,
}

/// Embeddings looked up from a JSON Lines table of `{"text", "vector"}`.
#[derive(Debug)]
pub struct FileProvider {
    table: HashMap<String, Vector>,
    dim: usize,
    id: String,
    fallback: Option<HashProvider>,
    misses: AtomicUsize,
}

impl FileProvider {
    pub fn load(path: impl AsRef<Path>, fallback: Option<HashProvider>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        let mut dim = None;
        for (idx, line) in bytes.split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let entry: FileEntry =
                serde_json::from_slice(line).map_err(|e| parse_err(e.to_string()))?;
            let d = *dim.get_or_insert(entry.vector.len());
            if entry.vector.len() != d || d == 0 {
                return Err(parse_err(format!(
                    "vector of length {} (expected {d})",
                    entry.vector.len()
                )));
            }
            let v = Vector::new(entry.vector).map_err(|e| parse_err(e.to_string()))?;
            table.insert(entry.text, v);
        }
        let dim = match (dim, &fallback) {
            (Some(d), _) => d,
            (None, Some(f)) => f.dim,
            (None, None) => {
                return Err(Error::InvalidInput(format!(
                    "{}: embedding file is empty",
                    path.display()
                )))
            }
        };
        if let Some(f) = &fallback {
            if f.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: f.dim,
                });
            }
        }
        let id = format!("file-{}", &hex::encode(Sha256::digest(&bytes))[..16]);
        Ok(FileProvider {
            table,
            dim,
            id,
            fallback,
            misses: AtomicUsize::new(0),
        })
    }

    /// Number of lookups that fell through to the fallback.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl EmbeddingProvider for FileProvider {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        require_text(text)?;
        if let Some(v) = self.table.get(text) {
            return Ok(v.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        match &self.fallback {
            Some(f) => f.embed(text),
            None => Err(Error::InvalidInput(format!(
                "no embedding for {text:?} and no fallback provider"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    digest: String,
    vector: Vec<f64>,
}

/// Memoizes an inner provider in memory and, optionally, in
/// `<dir>/<provider-id>.jsonl`.
pub struct CachedProvider<P> {
    inner: P,
    memory: RwLock<HashMap<String, Vector>>,
    disk: Option<Mutex<BufWriter<File>>>,
    backend_calls: AtomicUsize,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        CachedProvider {
            inner,
            memory: RwLock::new(HashMap::new()),
            disk: None,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_disk_cache(inner: P, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = Self::cache_path(dir, &inner.id());
        let mut memory = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                if entry.vector.len() == inner.dim() {
                    memory.insert(entry.digest, Vector::new(entry.vector)?);
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(CachedProvider {
            inner,
            memory: RwLock::new(memory),
            disk: Some(Mutex::new(BufWriter::new(file))),
            backend_calls: AtomicUsize::new(0),
        })
    }

    pub fn cache_path(dir: &Path, provider_id: &str) -> PathBuf {
        let safe: String = provider_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        dir.join(format!("{safe}.jsonl"))
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// How many texts were forwarded to the inner provider.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    fn store(&self, digest: String, v: &Vector) -> Result<()> {
        if let Some(disk) = &self.disk {
            let mut w = disk.lock().expect("cache writer poisoned");
            let line = CacheLine {
                digest: digest.clone(),
                vector: v.0.clone(),
            };
            serde_json::to_writer(&mut *w, &line)
                .map_err(|e| Error::Backend(format!("embedding cache write: {e}")))?;
            w.write_all(b"\n")
                .and_then(|_| w.flush())
                .map_err(|e| Error::Backend(format!("embedding cache write: {e}")))?;
        }
        self.memory
            .write()
            .expect("cache poisoned")
            .insert(digest, v.clone());
        Ok(())
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        require_text(text)?;
        let digest = text_digest(text);
        if let Some(v) = self.memory.read().expect("cache poisoned").get(&digest) {
            return Ok(v.clone());
        }
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.embed(text)?;
        self.store(digest, &v)?;
        Ok(v)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        let mut out: Vec<Option<Vector>> = Vec::with_capacity(texts.len());
        let mut missing = Vec::new();
        {
            let memory = self.memory.read().expect("cache poisoned");
            for t in texts {
                require_text(t)?;
                let hit = memory.get(&text_digest(t)).cloned();
                if hit.is_none() && !missing.contains(t) {
                    missing.push(t.clone());
                }
                out.push(hit);
            }
        }
        if !missing.is_empty() {
            self.backend_calls
                .fetch_add(missing.len(), Ordering::Relaxed);
            let fetched = self.inner.embed_batch(&missing)?;
            for (t, v) in missing.iter().zip(&fetched) {
                self.store(text_digest(t), v)?;
            }
            let memory = self.memory.read().expect("cache poisoned");
            for (slot, t) in out.iter_mut().zip(texts) {
                if slot.is_none() {
                    *slot = memory.get(&text_digest(t)).cloned();
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

/// Embeds `text` and truncates to the working dimension `dim`.
pub fn embed_truncated(provider: &dyn EmbeddingProvider, text: &str, dim: usize) -> Result<Vector> {
    let v = provider.embed(text)?;
    if v.dim() != provider.dim() {
        return Err(Error::DimensionMismatch {
            expected: provider.dim(),
            got: v.dim(),
        });
    }
    truncate_mrl(&v, dim)
}
