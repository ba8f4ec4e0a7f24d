//! Embedding providers with IO: the HTTP provider speaking the common
//! embeddings-endpoint shape, and construction of the local hashed
//! provider from config.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use flowgen_core::retrieval::{EmbedError, EmbeddingProvider, HashedEmbedder};

/// Which embedding provider an experiment uses. The TST-vs-pre-trained
/// ablation axis is two different `Http` endpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderConfig {
    /// Deterministic local provider for offline runs and tests.
    Hashed {
        dimension: usize,
        /// Fit per-bucket IDF weights on the index corpus before use.
        #[serde(default)]
        fit_idf: bool,
    },
    /// Remote service: POST {"input": [texts]} -> {"data": [{"embedding": [...]}]}.
    Http {
        base_url: String,
        name: String,
        dimension: usize,
        #[serde(default)]
        api_key_env: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_timeout_secs() -> u64 {
    60
}

impl ProviderConfig {
    /// Instantiates the provider; `corpus` feeds IDF fitting for the
    /// hashed provider and is ignored otherwise.
    pub fn build(&self, corpus: &[&str]) -> Box<dyn EmbeddingProvider> {
        match self {
            ProviderConfig::Hashed { dimension, fit_idf } => {
                if *fit_idf {
                    Box::new(HashedEmbedder::fit(*dimension, corpus))
                } else {
                    Box::new(HashedEmbedder::new(*dimension))
                }
            }
            ProviderConfig::Http {
                base_url,
                name,
                dimension,
                api_key_env,
                timeout_secs,
            } => Box::new(HttpEmbedder::new(
                base_url,
                name,
                *dimension,
                api_key_env,
                *timeout_secs,
            )),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
}

pub struct HttpEmbedder {
    url: String,
    name: String,
    dimension: usize,
    api_key_env: String,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, name: &str, dimension: usize, api_key_env: &str, timeout_secs: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .build()
            .into();
        Self {
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            name: name.to_string(),
            dimension,
            api_key_env: api_key_env.to_string(),
            agent,
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut request = self.agent.post(&self.url);
        if !self.api_key_env.is_empty() {
            let key = std::env::var(&self.api_key_env)
                .map_err(|_| EmbedError(format!("env var {} is not set", self.api_key_env)))?;
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&EmbedRequest { input: texts })
            .map_err(|e| EmbedError(e.to_string()))?;
        let body: EmbedResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError(format!("bad response body: {e}")))?;
        if body.data.len() != texts.len() {
            return Err(EmbedError(format!(
                "endpoint returned {} vectors for {} inputs",
                body.data.len(),
                texts.len()
            )));
        }
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}
