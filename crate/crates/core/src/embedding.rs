//! Embedding vectors, cosine distance and the two embedders: a hashed
//! character-trigram embedder for offline runs and a client for remote
//! embedding services.


use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::parallel::bounded_map;

pub const EMBED_API_KEY_ENV: &str = "EMBED_API_KEY";
pub const DEFAULT_LOCAL_DIM: usize = 256;
pub const MIN_LOCAL_DIM: usize = 16;

/// A non-zero vector with its Euclidean norm cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("embedding vector has zero dimensions"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding vector has non-finite components"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::validation("embedding vector is all zeros"));
        }
        Ok(Self { values, norm })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Rounds every component to `f32` precision, matching what the index
    /// cache stores on disk.
    pub fn quantized(&self) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| v as f32 as f64).collect())
    }
}

/// `1 - (a·b) / (‖a‖‖b‖)`, clamped to `[0, 2]` against rounding.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (a.norm * b.norm)).clamp(0.0, 2.0))
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Bucket index of one feature string.
pub fn feature_bucket(feature: &str, dim: usize) -> usize {
    (fnv1a64(feature.as_bytes()) % dim as u64) as usize
}

/// Character features of `text`: lowercase trigrams, or single characters
/// when the text has fewer than three characters.
pub fn char_features(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    if chars.len() < 3 {
        return chars.iter().map(|c| c.to_string()).collect();
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Hashed character-trigram term-frequency vector, L2-normalized.
pub fn embed_local(text: &str, dim: usize) -> Result<EmbeddingVector> {
    if dim < MIN_LOCAL_DIM {
        return Err(Error::Config(format!("local embedder dim must be at least {MIN_LOCAL_DIM}, got {dim}")));
    }
    if text.is_empty() {
        return Err(Error::validation("cannot embed empty text"));
    }
    let mut counts = vec![0.0f64; dim];
    for f in char_features(text) {
        counts[feature_bucket(&f, dim)] += 1.0;
    }
    let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut counts {
        *v /= norm;
    }
    EmbeddingVector::new(counts)
}

pub trait Embedder: Send + Sync {
    /// Identifies the embedding function for cache validation.
    fn fingerprint(&self) -> String;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or_else(|| Error::remote("embedder returned no vector"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalEmbedder {
    dim: usize,
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < MIN_LOCAL_DIM {
            return Err(Error::Config(format!("local embedder dim must be at least {MIN_LOCAL_DIM}, got {dim}")));
        }
        Ok(Self { dim })
    }
}

impl Embedder for LocalEmbedder {
    fn fingerprint(&self) -> String {
        format!("local:fnv1a64-trigram-v1:dim={}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.par_iter().map(|t| embed_local(t, self.dim)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub batch_size: usize,
    pub parallel_requests: usize,
    pub retry: RetryPolicy,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Local,
            dim: DEFAULT_LOCAL_DIM,
            endpoint: None,
            model_name: None,
            batch_size: 64,
            parallel_requests: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 || self.parallel_requests == 0 {
            return Err(Error::Config("embedder dim, batch_size and parallel_requests must be positive".into()));
        }
        if self.kind == EmbedderKind::Remote && (self.endpoint.is_none() || self.model_name.is_none()) {
            return Err(Error::Config("remote embedder requires endpoint and model_name".into()));
        }
        Ok(())
    }

    /// Builds the embedder; remote embedders read their key from
    /// [`EMBED_API_KEY_ENV`].
    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::Local => Box::new(LocalEmbedder::new(self.dim)?),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(self.clone(), std::env::var(EMBED_API_KEY_ENV).ok())?),
        })
    }
}

/// Client for `{"model", "input"}` → `{"data": [{"index", "embedding"}]}`
/// embedding endpoints.
pub struct RemoteEmbedder {
    spec: EmbedderSpec,
    endpoint: String,
    model: String,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(spec: EmbedderSpec, api_key: Option<String>) -> Result<Self> {
        let remote = EmbedderSpec {
            kind: EmbedderKind::Remote,
            ..spec
        };
        remote.validate()?;
        Ok(Self {
            endpoint: remote.endpoint.clone().expect("validated"),
            model: remote.model_name.clone().expect("validated"),
            client: JsonClient::new(remote.retry.clone(), api_key),
            spec: remote,
        })
    }

    fn embed_one_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({"model": self.model, "input": texts});
        let resp = self.client.post(&self.endpoint, &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::remote(format!("{}: response has no data array", self.endpoint)))?;
        if data.len() != texts.len() {
            return Err(Error::remote(format!(
                "{}: sent {} inputs but received {} vectors",
                self.endpoint,
                texts.len(),
                data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::remote(format!("{}: item {pos} has no embedding", self.endpoint)))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| Error::remote("non-numeric embedding component")))
                .collect::<Result<_>>()?;
            let slot = slots
                .get_mut(index)
                .ok_or_else(|| Error::remote(format!("{}: index {index} out of range", self.endpoint)))?;
            if slot.is_some() {
                return Err(Error::remote(format!("{}: duplicate index {index}", self.endpoint)));
            }
            *slot = Some(EmbeddingVector::new(values)?);
        }
        slots
            .into_iter()
            .map(|s| s.ok_or_else(|| Error::remote("response is missing an index")))
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn fingerprint(&self) -> String {
        format!("remote:{}:{}:dim={}", self.endpoint, self.model, self.spec.dim)
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let vectors = embed_remote(texts, self)?;
        if let Some(v) = vectors.iter().find(|v| v.dim() != self.spec.dim) {
            return Err(Error::remote(format!(
                "{}: expected dim {} but service returned {}",
                self.endpoint,
                self.spec.dim,
                v.dim()
            )));
        }
        Ok(vectors)
    }
}

/// Splits `texts` into batches, keeps at most `parallel_requests` batches in
/// flight and reassembles results in input order.
pub fn embed_remote(texts: &[&str], embedder: &RemoteEmbedder) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let batches: Vec<&[&str]> = texts.chunks(embedder.spec.batch_size).collect();
    let out: Vec<EmbeddingVector> = bounded_map(&batches, embedder.spec.parallel_requests, |b| embedder.embed_one_batch(b))?
        .into_iter()
        .flatten()
        .collect();
    let dim = out[0].dim();
    if out.iter().any(|v| v.dim() != dim) {
        return Err(Error::remote("embedding service returned vectors of inconsistent dimension"));
    }
    Ok(out)
}
