//! HTTP clients for remote embedding, perplexity and judge backends.
//!
//! Requests follow the common `/v1/embeddings`, `/v1/completions` and
//! `/v1/chat/completions` JSON shapes. Responses are cached on disk by a
//! digest of the request kind, model and input text.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{Language, Sentence};
use crate::edits::{leave_one_out, EditSet};
use crate::embed::{EmbeddingProvider, Vector};
use crate::error::{Error, Result};
use crate::eval::EditLabel;
use crate::rank::Disfluency;

pub const DEFAULT_API_KEY_ENV: &str = "EDITIMPACT_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    pub embeddings_path: String,
    pub completions_path: String,
    pub chat_path: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8000".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            model: String::new(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: 4,
            cache_dir: None,
            backoff_ms: 500,
            embeddings_path: "/v1/embeddings".into(),
            completions_path: "/v1/completions".into(),
            chat_path: "/v1/chat/completions".into(),
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::InvalidInput(
                "remote timeout must be positive".into(),
            ));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidInput(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if self.base_url.is_empty() {
            return Err(Error::InvalidInput("remote base_url is empty".into()));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent requests.
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// JSON values stored as `<dir>/<digest>.json`.
struct DiskCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(DiskCache {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    fn path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    fn get(&self, digest: &str) -> Option<Value> {
        let text = std::fs::read_to_string(self.path(digest)).ok()?;
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                warn!("ignoring unreadable cache entry {digest}: {e}");
                None
            }
        }
    }

    fn put(&self, digest: &str, value: &Value) -> Result<()> {
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        let path = self.path(digest);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_string(value).map_err(|e| Error::Backend(e.to_string()))?;
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

pub fn request_digest(kind: &str, model: &str, text: &str) -> String {
    let mut h = Sha256::new();
    for part in [kind, model, text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Shared HTTP plumbing: bounded concurrency, retries, caching.
pub struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    slots: Semaphore,
    cache: Option<DiskCache>,
    requests: AtomicUsize,
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        cfg.validate()?;
        let agent_cfg = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build();
        let cache = cfg.cache_dir.as_deref().map(DiskCache::new).transpose()?;
        Ok(RemoteClient {
            slots: Semaphore::new(cfg.max_in_flight),
            agent: ureq::Agent::new_with_config(agent_cfg),
            cache,
            cfg,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// HTTP attempts made so far, retries included.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn cached(&self, digest: &str) -> Option<Value> {
        self.cache.as_ref().and_then(|c| c.get(digest))
    }

    fn store(&self, digest: &str, value: &Value) -> Result<()> {
        match &self.cache {
            Some(c) => c.put(digest, value),
            None => Ok(()),
        }
    }

    /// POSTs `body` to `path`, retrying 429, 5xx and transport failures with
    /// exponential backoff.
    pub fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path);
        let payload = serde_json::to_string(body).map_err(|e| Error::Backend(e.to_string()))?;
        let key = std::env::var(&self.cfg.api_key_env).ok();
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.slots.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                let mut req = self
                    .agent
                    .post(&url)
                    .header("Content-Type", "application/json");
                if let Some(k) = &key {
                    req = req.header("Authorization", format!("Bearer {k}"));
                }
                req.send(payload.as_str())
                    .map_err(|e| match e {
                        ureq::Error::Timeout(t) => {
                            format!("timeout ({t}) after {}s", self.cfg.timeout_secs)
                        }
                        other => other.to_string(),
                    })
                    .and_then(|mut resp| {
                        let status = resp.status().as_u16();
                        resp.body_mut()
                            .read_to_string()
                            .map(|text| (status, text))
                            .map_err(|e| e.to_string())
                    })
            };
            let retryable = match &outcome {
                Ok((status, _)) => *status == 429 || *status >= 500,
                Err(_) => true,
            };
            if !retryable || attempt >= self.cfg.max_retries {
                return match outcome {
                    Ok((status, text)) if (200..300).contains(&status) => {
                        serde_json::from_str(&text)
                            .map_err(|e| Error::Backend(format!("malformed JSON from {url}: {e}")))
                    }
                    Ok((status, text)) => Err(Error::Status {
                        status,
                        body: text.chars().take(500).collect(),
                    }),
                    Err(msg) => Err(Error::Backend(format!("{url}: {msg}"))),
                };
            }
            let wait = self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
            match &outcome {
                Ok((status, _)) => debug!("{url}: HTTP {status}, retrying in {wait} ms"),
                Err(msg) => debug!("{url}: {msg}, retrying in {wait} ms"),
            }
            std::thread::sleep(Duration::from_millis(wait));
            attempt += 1;
        }
    }
}

fn malformed(what: &str) -> Error {
    Error::Backend(format!("malformed response: {what}"))
}

pub fn embeddings_request(model: &str, texts: &[String]) -> Value {
    json!({ "model": model, "input": texts })
}

pub fn perplexity_request(model: &str, text: &str) -> Value {
    json!({
        "model": model,
        "prompt": text,
        "max_tokens": 0,
        "echo": true,
        "logprobs": 0,
        "temperature": 0,
    })
}

pub fn judge_request(model: &str, prompt: &str) -> Value {
    json!({
        "model": model,
        "messages": [{ "role": "user", "content": prompt }],
        "temperature": 0,
    })
}

fn parse_embeddings(resp: &Value, n: usize) -> Result<Vec<Vec<f64>>> {
    let data = resp
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing data array"))?;
    if data.len() != n {
        return Err(malformed(&format!(
            "{} embeddings for {n} inputs",
            data.len()
        )));
    }
    let mut out: Vec<Option<Vec<f64>>> = vec![None; n];
    for (pos, item) in data.iter().enumerate() {
        let idx = item
            .get("index")
            .and_then(Value::as_u64)
            .map_or(pos, |i| i as usize);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("missing embedding"))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| malformed("non-numeric embedding entry"))
            })
            .collect::<Result<Vec<f64>>>()?;
        if idx >= n || out[idx].is_some() {
            return Err(malformed(&format!("bad embedding index {idx}")));
        }
        out[idx] = Some(values);
    }
    let out: Vec<Vec<f64>> = out
        .into_iter()
        .map(|v| v.expect("every index filled"))
        .collect();
    if let Some(first) = out.first() {
        if let Some(bad) = out.iter().find(|v| v.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: bad.len(),
            });
        }
    }
    Ok(out)
}

/// Embeddings from a remote backend; the dimension must be known up front.
pub struct RemoteEmbedder {
    client: RemoteClient,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteConfig, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(RemoteEmbedder {
            client: RemoteClient::new(cfg)?,
            dim,
        })
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }

    fn digest(&self, text: &str) -> String {
        request_digest("embed", &self.client.cfg.model, text)
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote-{}-{}", self.client.cfg.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        let mut v = self.embed_batch(&[text.to_string()])?;
        Ok(v.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        if texts.is_empty() {
            return Err(Error::InvalidInput("empty embedding batch".into()));
        }
        let mut out: Vec<Option<Vector>> = Vec::with_capacity(texts.len());
        let mut missing: Vec<String> = Vec::new();
        for t in texts {
            let hit = self
                .client
                .cached(&self.digest(t))
                .and_then(|v| serde_json::from_value::<Vector>(v).ok())
                .filter(|v| v.dim() == self.dim);
            if hit.is_none() && !missing.contains(t) {
                missing.push(t.clone());
            }
            out.push(hit);
        }
        if !missing.is_empty() {
            let resp = self.client.post(
                &self.client.cfg.embeddings_path,
                &embeddings_request(&self.client.cfg.model, &missing),
            )?;
            let vectors = parse_embeddings(&resp, missing.len())?;
            for (t, values) in missing.iter().zip(vectors) {
                if values.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: values.len(),
                    });
                }
                let v = Vector::new(values)?;
                self.client.store(&self.digest(t), &json!(v.as_slice()))?;
                for (slot, text) in out.iter_mut().zip(texts) {
                    if slot.is_none() && text == t {
                        *slot = Some(v.clone());
                    }
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

/// Perplexity from echoed prompt token logprobs: `exp(-mean(logprob))`,
/// skipping the null entry a backend reports for the first token.
pub fn perplexity_from_response(resp: &Value) -> Result<f64> {
    let choice = resp
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| malformed("missing choices"))?;
    let logprobs = match choice.get("logprobs") {
        Some(Value::Object(o)) => o,
        _ => {
            return Err(Error::Backend(
                "backend lacks logprob support: response has no logprobs; \
                 it must honour echo=true with logprobs"
                    .into(),
            ))
        }
    };
    let tokens = logprobs
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| {
            Error::Backend("backend lacks logprob support: no token_logprobs in response".into())
        })?;
    let values: Vec<f64> = tokens
        .iter()
        .filter(|v| !v.is_null())
        .map(|v| v.as_f64().ok_or_else(|| malformed("non-numeric logprob")))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(malformed("empty logprob list"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((-mean).exp())
}

pub struct RemotePerplexity {
    client: RemoteClient,
}

impl RemotePerplexity {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        Ok(RemotePerplexity {
            client: RemoteClient::new(cfg)?,
        })
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }

    pub fn perplexity(&self, text: &str) -> Result<f64> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput(
                "cannot score an empty sentence remotely".into(),
            ));
        }
        let model = &self.client.cfg.model;
        let digest = request_digest("ppl", model, text);
        if let Some(v) = self.client.cached(&digest).and_then(|v| v.as_f64()) {
            return Ok(v);
        }
        let resp = self.client.post(
            &self.client.cfg.completions_path,
            &perplexity_request(model, text),
        )?;
        let ppl = perplexity_from_response(&resp)?;
        self.client.store(&digest, &json!(ppl))?;
        Ok(ppl)
    }
}

impl Disfluency for RemotePerplexity {
    fn id(&self) -> String {
        format!("remote-ppl-{}", self.client.cfg.model)
    }

    fn disfluency(&self, sentence: &Sentence) -> Result<f64> {
        self.perplexity(&sentence.text())
    }
}

pub const OUTPUT_FORMAT: &str = "Please output exactly {N} lines. Each line must contain ONLY the word 'corrected' or 'reasonable'. Do NOT output numbering, explanations, or thinking processes.";

fn judge_template(language: Language) -> Option<(&'static str, &'static str)> {
    // (instruction before the sentence list, criteria after it)
    match language {
        Language::En => Some((
            "You are a helpful assistant assisting in evaluating English sentences. Determine if the following sentences are acceptable in general English contexts.",
            "Criteria: reasonable (acceptable); corrected (clear errors/broken structure).",
        )),
        Language::Zh => Some((
            "你是一名协助评估中文句子的助手。请判断下列句子在一般中文语境中是否可以接受。",
            "标准：reasonable（可以接受）；corrected（存在明显错误或结构残缺）。",
        )),
        Language::Es => Some((
            "Actúa como un asistente útil para evaluar oraciones en español. Tu tarea es determinar si las siguientes oraciones son gramaticalmente aceptables.",
            "Criterios: reasonable (aceptable y comprensible); corrected (errores claros o faltas de ortografía).",
        )),
        Language::De => Some((
            "Du bist ein objektiver Korrektor für deutsche Texte. Deine Aufgabe ist es zu entscheiden, ob die folgenden Sätze grammatikalisch korrekt sind.",
            "Kriterien: reasonable (grammatikalisch korrekt, Kasus/Verbformen stimmen); corrected (enthält Grammatikfehler).",
        )),
        Language::Other => None,
    }
}

pub fn judge_prompt(sentences: &[String], language: Language) -> Result<String> {
    let (intro, criteria) = judge_template(language).ok_or_else(|| {
        Error::InvalidInput(format!("no judge prompt template for language {language}"))
    })?;
    let mut prompt = String::from(intro);
    prompt.push_str("\n\n");
    for (i, s) in sentences.iter().enumerate() {
        prompt.push_str(&format!("{}. {s}\n", i + 1));
    }
    prompt.push('\n');
    prompt.push_str(criteria);
    prompt.push('\n');
    prompt.push_str(&OUTPUT_FORMAT.replace("{N}", &sentences.len().to_string()));
    Ok(prompt)
}

/// Exactly `n` lines, each `corrected` or `reasonable` in any case and
/// surrounded by any whitespace. Blank lines are ignored.
pub fn parse_judge_output(text: &str, n: usize) -> Result<Vec<EditLabel>> {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.len() != n {
        return Err(Error::Backend(format!(
            "judge returned {} lines, expected {n}",
            lines.len()
        )));
    }
    lines
        .iter()
        .map(|l| match l.to_lowercase().as_str() {
            "corrected" => Ok(EditLabel::Corrected),
            "reasonable" => Ok(EditLabel::Reasonable),
            _ => Err(Error::Backend(format!("unrecognized judge line {l:?}"))),
        })
        .collect()
}

pub struct RemoteJudge {
    client: RemoteClient,
}

impl RemoteJudge {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        Ok(RemoteJudge {
            client: RemoteClient::new(cfg)?,
        })
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }

    /// One label per sentence: `corrected` when the sentence is judged to
    /// contain clear errors.
    pub fn judge(&self, sentences: &[String], language: Language) -> Result<Vec<EditLabel>> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let prompt = judge_prompt(sentences, language)?;
        let model = &self.client.cfg.model;
        let digest = request_digest("judge", model, &prompt);
        let content = match self
            .client
            .cached(&digest)
            .and_then(|v| v.as_str().map(String::from))
        {
            Some(c) => c,
            None => {
                let resp = self
                    .client
                    .post(&self.client.cfg.chat_path, &judge_request(model, &prompt))?;
                let c = resp
                    .pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .ok_or_else(|| malformed("missing choices[0].message.content"))?
                    .to_string();
                self.client.store(&digest, &json!(c))?;
                c
            }
        };
        parse_judge_output(&content, sentences.len())
    }

    /// Labels each edit by judging the sentence with that edit left out: an
    /// edit is `corrected` when dropping it leaves an erroneous sentence.
    pub fn label_edits(&self, source: &Sentence, set: &EditSet) -> Result<Vec<EditLabel>> {
        let sentences: Vec<String> = set
            .iter()
            .map(|e| leave_one_out(source, set, e).map(|s| s.text()))
            .collect::<Result<_>>()?;
        self.judge(&sentences, source.language)
    }
}
