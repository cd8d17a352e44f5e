use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::EvalError;

/// Turns texts into vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError>;
}

/// Deterministic fallback: a hashed, unit-normalized bag of lower-cased
/// alphanumeric tokens. Identical texts embed identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimensions: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dimensions: 512 }
    }
}

impl HashingEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimensions.max(1)];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let h = Sha256::digest(token.to_lowercase().as_bytes());
            let idx = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize % v.len();
            v[idx] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Client for an OpenAI-compatible `/embeddings` route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedder {
    pub endpoint_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    60_000
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        let err = |m: String| EvalError::Embedding(m);
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(self.timeout_ms))
            .build()
            .map_err(|e| err(e.to_string()))?;
        let mut req = client
            .post(&self.endpoint_url)
            .json(&json!({ "model": self.model, "input": texts }));
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| err(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| err(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| err(e.to_string()))?;
        if !status.is_success() {
            return Err(err(format!("HTTP {status}: {body}")));
        }
        let data = body["data"].as_array().ok_or_else(|| err("response has no data array".into()))?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let i = item["index"].as_u64().map_or(pos, |i| i as usize);
            let v: Vec<f64> = serde_json::from_value(item["embedding"].clone())
                .map_err(|e| err(format!("embedding {i}: {e}")))?;
            *out.get_mut(i).ok_or_else(|| err(format!("index {i} out of range")))? = v;
        }
        if out.iter().any(Vec::is_empty) {
            return Err(err("response is missing embeddings".into()));
        }
        Ok(out)
    }
}

/// Cosine similarity. Two zero vectors count as identical (1), a zero and a
/// non-zero vector as unrelated (0).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot / (na * nb),
    }
}

/// Population variance of the n(n-1)/2 pairwise cosine similarities, and
/// their mean. Exactly 0 when every similarity is the same value.
pub fn pairwise_similarity_variance(embeddings: &[Vec<f64>]) -> Result<(f64, f64), EvalError> {
    if embeddings.len() < 2 {
        return Err(EvalError::TooFewRuns(embeddings.len()));
    }
    let mut sims = Vec::with_capacity(embeddings.len() * (embeddings.len() - 1) / 2);
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            sims.push(cosine_similarity(&embeddings[i], &embeddings[j]));
        }
    }
    // Sorting makes the sums independent of text order.
    sims.sort_by(f64::total_cmp);
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    if sims.iter().all(|s| s.to_bits() == sims[0].to_bits()) {
        return Ok((0.0, mean));
    }
    let var = sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok((var, mean))
}

/// Output lability over repeated runs: lower variance means more stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityScore {
    pub variance: f64,
    pub mean_similarity: f64,
    pub n_runs: usize,
}

pub fn stability_score(texts: &[String], embedder: &dyn Embedder) -> Result<StabilityScore, EvalError> {
    if texts.len() < 2 {
        return Err(EvalError::TooFewRuns(texts.len()));
    }
    let embeddings = embedder.embed(texts)?;
    if embeddings.len() != texts.len() {
        return Err(EvalError::Embedding(format!(
            "{} embeddings for {} texts",
            embeddings.len(),
            texts.len()
        )));
    }
    let (variance, mean_similarity) = pairwise_similarity_variance(&embeddings)?;
    Ok(StabilityScore {
        variance,
        mean_similarity,
        n_runs: texts.len(),
    })
}
