//! Sentence embeddings for the similarity metric.
//!
//! [`HashingEmbedder`] is the offline stand-in: each canonical token is
//! hashed with 64-bit FNV-1a, reduced modulo the dimension, counted, and the
//! count vector is L2-normalized. [`RemoteEmbedder`] calls an
//! OpenAI-compatible `/embeddings` endpoint and passes the vector through.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::gateway::{ApiKey, GatewayError};
use crate::tokenize::metric_tokens;

pub const MOCK_DIMENSION: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { values, norm }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim], norm: 0.0 }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

#[async_trait]
pub trait Embedder: Send + Sync {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dimension: MOCK_DIMENSION }
    }
}

impl HashingEmbedder {
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dimension as u64) as usize
    }

    pub fn embed_sync(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0.0; self.dimension];
        for token in metric_tokens(text) {
            counts[self.bucket(&token)] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return EmbeddingVector::zeros(self.dimension);
        }
        for v in &mut counts {
            *v /= norm;
        }
        EmbeddingVector::new(counts)
    }
}

#[async_trait]
impl Embedder for HashingEmbedder {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed_sync(text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_ref: String,
    pub timeout_secs: f64,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "text-embedding-3-small".into(),
            api_key_ref: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    key: Option<ApiKey>,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn from_config(config: &RemoteEmbedderConfig) -> Result<Self, GatewayError> {
        url::Url::parse(&config.base_url).map_err(|e| GatewayError::InvalidConfig(format!("base_url: {e}")))?;
        let key = if config.api_key_ref.is_empty() { None } else { Some(ApiKey::from_env(&config.api_key_ref)?) };
        let client = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/embeddings", config.base_url.trim_end_matches('/')),
            model: config.model_name.clone(),
            key,
        })
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let mut req = self.client.post(&self.endpoint).json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.key {
            req = req.bearer_auth(key.expose());
        }
        let resp = req.send().await.map_err(crate::gateway::openai_classify_reqwest)?;
        let status = resp.status();
        let body = resp.text().await.map_err(crate::gateway::openai_classify_reqwest)?;
        if !status.is_success() {
            return Err(crate::gateway::openai_classify_status(status, &body));
        }
        let parsed: EmbeddingsResponse =
            serde_json::from_str(&body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
        let datum = parsed.data.into_iter().next().ok_or_else(|| GatewayError::Malformed("no embedding".into()))?;
        Ok(EmbeddingVector::new(datum.embedding))
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 || a.values.len() != b.values.len() {
        return 0.0;
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    (dot / (a.norm * b.norm)).clamp(-1.0, 1.0)
}

pub async fn embedding_similarity(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<f64, GatewayError> {
    let a = embedder.embed(candidate).await?;
    let b = embedder.embed(reference).await?;
    Ok(cosine(&a, &b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_and_zero() {
        let e = HashingEmbedder::default();
        let v = e.embed_sync("hello hello");
        assert!((v.norm - 1.0).abs() < 1e-12);
        let z = e.embed_sync("");
        assert_eq!(z.norm, 0.0);
        assert!(z.values.iter().all(|x| *x == 0.0));
        assert_eq!(z.dimension(), MOCK_DIMENSION);
    }

    #[test]
    fn order_independent() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed_sync("a b"), e.embed_sync("b a"));
    }

    #[tokio::test]
    async fn similarity_edges() {
        let e = HashingEmbedder::default();
        let same = embedding_similarity("the quiet harbour", "the quiet harbour", &e).await.unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        assert_eq!(embedding_similarity("", "anything", &e).await.unwrap(), 0.0);
    }

    #[tokio::test]
    async fn disjoint_vocabulary_without_collisions() {
        let e = HashingEmbedder::default();
        let left = ["apple", "river"];
        let right = ["stone", "violet"];
        // the chosen tokens must land in distinct buckets for the claim to hold
        let mut buckets: Vec<usize> = left.iter().chain(&right).map(|t| e.bucket(t)).collect();
        buckets.sort_unstable();
        buckets.dedup();
        assert_eq!(buckets.len(), 4, "pick different tokens: bucket collision");
        let sim = embedding_similarity("apple river", "stone violet", &e).await.unwrap();
        assert_eq!(sim, 0.0);
    }

    #[tokio::test]
    async fn remote_passes_vector_through() {
        let body = r#"{"data":[{"embedding":[3.0,4.0]}]}"#;
        let (base, _seen) = crate::gateway::test_support::canned_server(vec![(200, body.into())]).await;
        let cfg = RemoteEmbedderConfig { base_url: base, api_key_ref: String::new(), ..Default::default() };
        let v = RemoteEmbedder::from_config(&cfg).unwrap().embed("x").await.unwrap();
        assert_eq!(v.values, vec![3.0, 4.0]);
        assert_eq!(v.norm, 5.0);
    }
}
