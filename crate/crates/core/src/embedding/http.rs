use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, Encoded, ProviderMode, StateVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after the first transport failure.
    pub retries: u32,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Pre-pooled provider backed by a JSON embedding endpoint:
/// `POST {"texts": [...]}` → `{"embeddings": [[...], ...]}`.
pub struct HttpProvider {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpProvider { config, client })
    }

    fn post_once(&self, texts: &[String]) -> std::result::Result<String, String> {
        let response = self
            .client
            .post(&self.config.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| e.to_string())?;
        let status = response.status();
        let body = response.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {body}"));
        }
        Ok(body)
    }
}

impl EmbeddingProvider for HttpProvider {
    fn mode(&self) -> ProviderMode {
        ProviderMode::PrePooled
    }

    fn cache_key(&self) -> String {
        format!("http:{}", self.config.endpoint)
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Encoded>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        let mut body = None;
        for _ in 0..attempts {
            match self.post_once(texts) {
                Ok(b) => {
                    body = Some(b);
                    break;
                }
                Err(e) => last = e,
            }
        }
        let body = body.ok_or(Error::Transport {
            attempts,
            message: last,
        })?;
        let parsed: EmbedResponse =
            serde_json::from_str(&body).map_err(|e| Error::ProtocolError(e.to_string()))?;
        if parsed.embeddings.len() != texts.len() {
            return Err(Error::ProtocolError(format!(
                "{} embeddings for {} texts",
                parsed.embeddings.len(),
                texts.len()
            )));
        }
        let dim = parsed.embeddings[0].len();
        if dim == 0 || parsed.embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::ProtocolError("inconsistent embedding dimensions".into()));
        }
        Ok(parsed
            .embeddings
            .into_iter()
            .map(|e| Encoded::Pooled(StateVector::from(e)))
            .collect())
    }
}
