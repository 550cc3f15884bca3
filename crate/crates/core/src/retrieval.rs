//! Embedding backends, an exact cosine top-k index and neighbor expansion.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::corpus::Segment;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding transport failure: {0}")]
    Transport(String),
    #[error("embedding response malformed: {0}")]
    BadResponse(String),
    #[error("embedding has dimension {found}, index expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index was built with embedder {index:?}, query uses {query:?}")]
    EmbedderMismatch { index: String, query: String },
    #[error("cannot build an index over zero segments")]
    NoSegments,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Produces raw (not necessarily normalized) embeddings.
pub trait Embedder: Send + Sync {
    /// Stable identifier; recorded in indexes, tables and cache keys.
    fn id(&self) -> String;
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Scales to unit L2 norm. The zero vector maps to `e0`.
    pub fn normalized(mut components: Vec<f64>) -> Self {
        let norm = components.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            components.iter_mut().for_each(|x| *x = 0.0);
            if let Some(first) = components.first_mut() {
                *first = 1.0;
            }
        } else {
            components.iter_mut().for_each(|x| *x /= norm);
        }
        Self(components)
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

pub fn embed(backend: &dyn Embedder, text: &str) -> Result<EmbeddingVector, RetrievalError> {
    Ok(EmbeddingVector::normalized(backend.embed_raw(text)?))
}

/// 64-bit FNV-1a; the mock embedder's bucket hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mock token form: lowercased, with leading/trailing non-alphanumerics
/// trimmed. Tokens that become empty are ignored.
pub fn mock_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Hashed bag of words: every token adds 1 to bucket
/// `fnv1a64(token) % dimension`.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
}

impl MockEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    /// Panics if `dimension` is zero.
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

impl Embedder for MockEmbedder {
    fn id(&self) -> String {
        format!("mock-hashed-bow-{}", self.dimension)
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut v = vec![0.0; self.dimension];
        for tok in text.split_whitespace().map(mock_token) {
            if !tok.is_empty() {
                v[self.bucket(&tok)] += 1.0;
            }
        }
        Ok(v)
    }
}

/// Remote embedder speaking `POST {base_url}/embeddings` with
/// `{"model", "input"}`. Accepts `{"data":[{"embedding":[..]}]}`,
/// `{"embedding":[..]}` or `{"embeddings":[[..]]}` responses.
#[cfg(feature = "http")]
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    max_retries: u32,
}

#[cfg(feature = "http")]
impl HttpEmbedder {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key: Option<String>,
        timeout: std::time::Duration,
        max_retries: u32,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            agent,
            max_retries,
        }
    }

    fn call(&self, text: &str) -> Result<serde_json::Value, RetrievalError> {
        let mut req = self.agent.post(format!("{}/embeddings", self.base_url));
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let body = serde_json::json!({ "model": self.model, "input": text });
        req.send_json(&body)
            .map_err(|e| RetrievalError::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| RetrievalError::BadResponse(e.to_string()))
    }
}

#[cfg(feature = "http")]
fn parse_embedding_response(v: &serde_json::Value) -> Result<Vec<f64>, RetrievalError> {
    let vector = v
        .pointer("/data/0/embedding")
        .or_else(|| v.get("embedding"))
        .or_else(|| v.pointer("/embeddings/0"))
        .and_then(|x| x.as_array())
        .ok_or_else(|| RetrievalError::BadResponse("no embedding vector in response".into()))?;
    vector
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| RetrievalError::BadResponse("non-numeric component".into()))
        })
        .collect()
}

#[cfg(feature = "http")]
impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut attempt = 0;
        loop {
            match self.call(text) {
                Ok(v) => return parse_embedding_response(&v),
                Err(RetrievalError::Transport(_)) if attempt < self.max_retries => attempt += 1,
                Err(e) => return Err(e),
            }
        }
    }
}

/// Exact full-scan index over one document's segments.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    embedder_id: String,
    dimension: usize,
    /// Row `i` holds segment `i`.
    rows: Vec<EmbeddingVector>,
}

const INDEX_MAGIC: &[u8; 8] = b"PLRVIDX\0";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSegment {
    pub index: usize,
    pub score: f64,
}

pub fn build_index(
    segments: &[Segment],
    backend: &dyn Embedder,
) -> Result<VectorIndex, RetrievalError> {
    if segments.is_empty() {
        return Err(RetrievalError::NoSegments);
    }
    let mut rows = Vec::with_capacity(segments.len());
    let mut dimension = None;
    for (i, seg) in segments.iter().enumerate() {
        debug_assert_eq!(seg.index, i);
        let v = embed(backend, &seg.text)?;
        match dimension {
            None => dimension = Some(v.dimension()),
            Some(d) if d != v.dimension() => {
                return Err(RetrievalError::DimensionMismatch {
                    expected: d,
                    found: v.dimension(),
                })
            }
            Some(_) => {}
        }
        rows.push(v);
    }
    Ok(VectorIndex {
        embedder_id: backend.id(),
        dimension: dimension.unwrap_or(0),
        rows,
    })
}

impl VectorIndex {
    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, index: usize) -> Option<&EmbeddingVector> {
        self.rows.get(index)
    }

    /// Top-k rows by dot product with `query`, highest first, ties by
    /// ascending segment index.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredSegment>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            });
        }
        let mut scored: Vec<ScoredSegment> = self
            .rows
            .iter()
            .enumerate()
            .map(|(index, row)| ScoredSegment {
                index,
                score: row.dot(query),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Binary layout (little endian): magic, u32 version, u32 id length, id
    /// bytes, u32 dimension, u64 count, then per row a u64 segment index and
    /// `dimension` f64 components.
    pub fn save<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        let id = self.embedder_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        for (i, row) in self.rows.iter().enumerate() {
            w.write_all(&(i as u64).to_le_bytes())?;
            for x in row.components() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, RetrievalError> {
        fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], RetrievalError> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| RetrievalError::Format(format!("truncated: {e}")))?;
            Ok(buf)
        }
        if &take::<8>(&mut r)? != INDEX_MAGIC {
            return Err(RetrievalError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != INDEX_VERSION {
            return Err(RetrievalError::Format(format!("unsupported version {version}")));
        }
        let id_len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)
            .map_err(|e| RetrievalError::Format(format!("truncated: {e}")))?;
        let embedder_id =
            String::from_utf8(id).map_err(|_| RetrievalError::Format("embedder id not UTF-8".into()))?;
        let dimension = u32::from_le_bytes(take(&mut r)?) as usize;
        let count = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut rows = Vec::with_capacity(count.min(1 << 16));
        for expected in 0..count {
            let index = u64::from_le_bytes(take(&mut r)?) as usize;
            if index != expected {
                return Err(RetrievalError::Format(format!(
                    "row {expected} has segment index {index}"
                )));
            }
            let mut comps = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                comps.push(f64::from_le_bytes(take(&mut r)?));
            }
            rows.push(EmbeddingVector(comps));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(RetrievalError::Format("trailing bytes".into()));
        }
        Ok(Self {
            embedder_id,
            dimension,
            rows,
        })
    }
}

/// Embeds `query` with `backend` and returns the exact top-k segments.
pub fn retrieve(
    index: &VectorIndex,
    query: &str,
    k: usize,
    backend: &dyn Embedder,
) -> Result<Vec<ScoredSegment>, RetrievalError> {
    let id = backend.id();
    if id != index.embedder_id {
        return Err(RetrievalError::EmbedderMismatch {
            index: index.embedder_id.clone(),
            query: id,
        });
    }
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let q = embed(backend, query)?;
    index.search(&q, k)
}

/// Adds the previous and next segment of every retrieved one. Output is
/// ascending and duplicate-free; indices past `total_segments` are dropped.
pub fn expand_neighbors(ranked: &[usize], total_segments: usize) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for &i in ranked.iter().filter(|&&i| i < total_segments) {
        if i > 0 {
            out.insert(i - 1);
        }
        out.insert(i);
        if i + 1 < total_segments {
            out.insert(i + 1);
        }
    }
    out.into_iter().collect()
}
