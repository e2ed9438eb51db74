use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::transport::JsonClient;

/// An external text-embedding service.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identity recorded in workspace metadata.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Raw (not necessarily normalized) vectors, one per text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        (**self).embed(texts)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// `POST {"texts":[..]}` → `{"vectors":[[..],..]}`.
pub struct HttpEmbeddingProvider {
    client: JsonClient,
    id: String,
    dim: usize,
}

impl HttpEmbeddingProvider {
    pub const ENV_URL: &'static str = "EMBED_URL";

    pub fn new(url: impl Into<String>, dim: usize) -> Self {
        let client = JsonClient::new(url, Duration::from_secs(120));
        let id = format!("http:{}", client.url());
        Self { client, id, dim }
    }

    pub fn from_env(dim: usize) -> Result<Self> {
        let url = std::env::var(Self::ENV_URL)
            .map_err(|_| Error::Config(format!("{} is not set", Self::ENV_URL)))?;
        Ok(Self::new(url, dim))
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let resp: EmbedResponse = self.client.post(&EmbedRequest { texts })?;
        Ok(resp.vectors)
    }
}

/// Offline signed feature-hashing embedder over lowercase word tokens.
///
/// Texts sharing vocabulary land near each other, which is enough for
/// demos and smoke runs without a model server.
pub struct HashingEmbedder {
    dim: usize,
    id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            id: format!("hashing:{dim}"),
        }
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for token in text.split_whitespace() {
            let token: String = token.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect();
            if token.is_empty() {
                continue;
            }
            let h = Sha256::digest(token.as_bytes());
            let idx = u64::from_le_bytes(h[..8].try_into().unwrap()) as usize % self.dim;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
