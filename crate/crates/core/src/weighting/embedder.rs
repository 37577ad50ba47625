use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::{HttpRequest, ServiceClient, ServiceError, Transport};

/// Texts longer than this many whitespace tokens are embedded chunk-wise.
pub const MAX_CHUNK_TOKENS: usize = 512;

#[derive(Debug, Error, Clone)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    Unavailable(#[from] ServiceError),
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Malformed("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Malformed("non-finite component".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self(self.0.iter().map(|v| v / n).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    /// Component-wise mean of equally sized vectors.
    pub fn mean(vectors: &[EmbeddingVector]) -> Option<Self> {
        let first = vectors.first()?;
        let mut acc = vec![0.0; first.dim()];
        for v in vectors {
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        Some(Self(acc.into_iter().map(|a| a / n).collect()))
    }
}

/// Embedding provider contract: one fixed-dimension vector per input text.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed(texts)
    }
}

/// Deterministic bag-of-tokens embedder.
///
/// Each whitespace token of the lowercased text maps to a unit vector of
/// 64 components drawn from a SplitMix64 stream seeded with the token's
/// FNV-1a hash; a text embeds to the normalized mean of its token vectors,
/// and an empty text to the zero vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct TestEmbedder;

impl TestEmbedder {
    pub const DIM: usize = 64;
    pub const SEED: u64 = 0x5EED_ED0C_6A9D_0001;

    pub fn token_hash(token: &str) -> u64 {
        const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ Self::SEED;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h
    }

    /// Unit vector for one (already lowercased) token.
    pub fn token_vector(token: &str) -> EmbeddingVector {
        let mut state = Self::token_hash(token);
        let raw: Vec<f64> = (0..Self::DIM)
            .map(|_| {
                let x = splitmix64(&mut state);
                // 53 random bits mapped onto [-1, 1)
                (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        EmbeddingVector(raw).normalized()
    }

    pub fn embed_one(text: &str) -> EmbeddingVector {
        let lowered = text.to_lowercase();
        let tokens: Vec<EmbeddingVector> = lowered.split_whitespace().map(Self::token_vector).collect();
        match EmbeddingVector::mean(&tokens) {
            Some(mean) => mean.normalized(),
            None => EmbeddingVector::zeros(Self::DIM),
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Embedder for TestEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| Self::embed_one(t)).collect())
    }
}

/// Client for a remote encoder speaking `POST /embed {model, texts} -> {vectors}`.
pub struct RemoteEmbedder {
    client: ServiceClient,
    endpoint: String,
    model: String,
    batch_size: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl RemoteEmbedder {
    pub fn new(transport: Arc<dyn Transport>, base_url: &str, model: &str) -> Self {
        Self::with_client(ServiceClient::new(transport), base_url, model)
    }

    pub fn with_client(client: ServiceClient, base_url: &str, model: &str) -> Self {
        Self {
            client,
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            model: model.to_string(),
            batch_size: 64,
        }
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = serde_json::to_value(EmbedRequest {
            model: &self.model,
            texts,
        })
        .map_err(|e| EmbedError::Malformed(e.to_string()))?;
        let resp = self.client.send(&HttpRequest::post(&self.endpoint).json(body))?;
        let parsed: EmbedResponse =
            serde_json::from_str(&resp.body).map_err(|e| EmbedError::Malformed(e.to_string()))?;
        if parsed.vectors.len() != texts.len() {
            return Err(EmbedError::Malformed(format!(
                "expected {} vectors, got {}",
                texts.len(),
                parsed.vectors.len()
            )));
        }
        parsed.vectors.into_iter().map(EmbeddingVector::new).collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(batch)?);
        }
        if let Some(first) = out.first() {
            if let Some(bad) = out.iter().find(|v| v.dim() != first.dim()) {
                return Err(EmbedError::DimensionMismatch {
                    left: first.dim(),
                    right: bad.dim(),
                });
            }
        }
        Ok(out)
    }
}

/// Memoizes embeddings by exact text. Used for the material and slide
/// texts that every concept is compared against.
pub struct CachingEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<E: Embedder> CachingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<E: Embedder> Embedder for CachingEmbedder<E> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let missing: Vec<&str> = {
            let cache = self.cache.lock().expect("embedding cache");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .copied()
                .filter(|t| !cache.contains_key(*t) && seen.insert(*t))
                .collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed(&missing)?;
            let mut cache = self.cache.lock().expect("embedding cache");
            for (text, v) in missing.iter().zip(fresh) {
                cache.insert((*text).to_string(), v);
            }
        }
        let cache = self.cache.lock().expect("embedding cache");
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }
}

fn chunk_texts(text: &str) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    tokens.chunks(MAX_CHUNK_TOKENS).map(|c| c.join(" ")).collect()
}

/// Embeds every text, splitting texts longer than [`MAX_CHUNK_TOKENS`]
/// tokens into chunks whose embeddings are averaged and re-normalized.
/// Empty input issues no provider call.
pub fn embed_texts(embedder: &dyn Embedder, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let mut requests: Vec<String> = Vec::new();
    // per text: range into `requests`, or None when embedded whole
    let mut plan: Vec<Option<std::ops::Range<usize>>> = Vec::with_capacity(texts.len());
    for text in texts {
        let chunks = chunk_texts(text);
        if chunks.len() <= 1 {
            plan.push(None);
            requests.push((*text).to_string());
        } else {
            let start = requests.len();
            requests.extend(chunks);
            plan.push(Some(start..requests.len()));
        }
    }
    let refs: Vec<&str> = requests.iter().map(String::as_str).collect();
    let vectors = embedder.embed(&refs)?;
    if vectors.len() != refs.len() {
        return Err(EmbedError::Malformed(format!(
            "expected {} vectors, got {}",
            refs.len(),
            vectors.len()
        )));
    }
    let mut out = Vec::with_capacity(texts.len());
    let mut cursor = 0;
    for entry in plan {
        match entry {
            None => {
                out.push(vectors[cursor].clone());
                cursor += 1;
            }
            Some(range) => {
                let mean = EmbeddingVector::mean(&vectors[range.clone()]).expect("non-empty chunk range");
                out.push(mean.normalized());
                cursor = range.end;
            }
        }
    }
    Ok(out)
}

pub fn embed_text(embedder: &dyn Embedder, text: &str) -> Result<EmbeddingVector, EmbedError> {
    Ok(embed_texts(embedder, &[text])?.remove(0))
}
