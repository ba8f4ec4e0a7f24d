//! Chat-completion endpoints: an HTTP client with retry/backoff for the
//! widely adopted chat-completions JSON schema, a replay endpoint for
//! offline runs, and generation-marker stripping.

use std::collections::HashMap;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::io::{read_jsonl, LoadError};

/// Strips generation markers from raw model output, applied to a
/// fixpoint so the result is stable under re-stripping: text between the
/// first `<START>` and the next `<END>` wins, then a fenced code block's
/// interior, then plain trimming.
pub fn strip_markers(raw: &str) -> String {
    let mut current = raw.to_string();
    loop {
        let next = strip_once(&current);
        if next == current {
            return next;
        }
        current = next;
    }
}

fn strip_once(raw: &str) -> String {
    if let Some(start) = raw.find("<START>") {
        let after = &raw[start + "<START>".len()..];
        if let Some(end) = after.find("<END>") {
            return after[..end].trim().to_string();
        }
    }
    if let Some(open) = raw.find("```") {
        let after = &raw[open + 3..];
        // Skip an optional language tag on the fence line.
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(close) = body.find("```") {
            return body[..close].trim().to_string();
        }
    }
    raw.trim().to_string()
}

/// Configuration for one chat-completion endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key; empty for
    /// unauthenticated endpoints.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_secs")]
    pub backoff_initial_secs: f64,
}

fn default_max_output_tokens() -> u32 {
    1024
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_secs() -> f64 {
    1.0
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("http request failed after {attempts} attempt(s): {message}")]
    Http { attempts: u32, message: String },
    #[error("endpoint returned an empty completion")]
    ContentEmpty,
    #[error("missing API key: environment variable {0} is not set")]
    MissingKey(String),
    #[error("no replay response recorded for example `{0}`")]
    ReplayMiss(String),
    #[error("malformed response body: {0}")]
    BadResponse(String),
}

/// One completed call, as written to the call log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub request_id: String,
    pub model: String,
    pub latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub text: String,
    pub log: CallLogEntry,
}

/// A generation endpoint keyed by example id so replay files can answer
/// deterministically.
pub trait Generator: Sync {
    fn generate(&self, example_id: &str, prompt: &str) -> Result<Generation, LlmError>;
}

// ---------------------------------------------------------------------------
// HTTP endpoint

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    id: String,
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Usage,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: String,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpGenerator {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, agent }
    }

    fn api_key(&self) -> Result<Option<String>, LlmError> {
        if self.config.api_key_env.is_empty() {
            return Ok(None);
        }
        std::env::var(&self.config.api_key_env)
            .map(Some)
            .map_err(|_| LlmError::MissingKey(self.config.api_key_env.clone()))
    }

    fn attempt(&self, key: Option<&str>, prompt: &str) -> Result<ChatResponse, AttemptError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = ChatRequest {
            model: &self.config.model_id,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            max_tokens: self.config.max_output_tokens,
            temperature: self.config.temperature,
        };
        let mut request = self.agent.post(&url);
        if let Some(key) = key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(&body) {
            Ok(mut response) => response
                .body_mut()
                .read_json::<ChatResponse>()
                .map_err(|e| AttemptError::Fatal(format!("bad response body: {e}"))),
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(AttemptError::Retryable(format!("status {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => {
                Err(AttemptError::Fatal(format!("status {code}")))
            }
            Err(e) => Err(AttemptError::Retryable(e.to_string())),
        }
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(String),
}

impl Generator for HttpGenerator {
    fn generate(&self, _example_id: &str, prompt: &str) -> Result<Generation, LlmError> {
        let key = self.api_key()?;
        let start = Instant::now();
        let mut last_error = String::new();
        let mut attempts = 0;
        while attempts <= self.config.max_retries {
            attempts += 1;
            match self.attempt(key.as_deref(), prompt) {
                Ok(response) => {
                    let text = response
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .unwrap_or_default();
                    if text.is_empty() {
                        return Err(LlmError::ContentEmpty);
                    }
                    return Ok(Generation {
                        text,
                        log: CallLogEntry {
                            request_id: response.id,
                            model: self.config.model_id.clone(),
                            latency_ms: start.elapsed().as_millis() as u64,
                            prompt_tokens: response.usage.prompt_tokens,
                            completion_tokens: response.usage.completion_tokens,
                        },
                    });
                }
                Err(AttemptError::Fatal(message)) => {
                    return Err(LlmError::Http { attempts, message })
                }
                Err(AttemptError::Retryable(message)) => {
                    last_error = message;
                    if attempts <= self.config.max_retries {
                        let backoff = self.config.backoff_initial_secs
                            * 2f64.powi(attempts as i32 - 1)
                            * rand::rng().random_range(0.5..1.5);
                        thread::sleep(Duration::from_secs_f64(backoff));
                    }
                }
            }
        }
        Err(LlmError::Http {
            attempts,
            message: last_error,
        })
    }
}

// ---------------------------------------------------------------------------
// Replay endpoint

/// One replay line: `{"id","response"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub id: String,
    pub response: String,
}

/// Answers each example id with a canned response from a JSONL file.
/// Ships with the toolkit so end-to-end runs need no live endpoint.
pub struct ReplayGenerator {
    responses: HashMap<String, String>,
}

impl ReplayGenerator {
    pub fn from_path(path: &Path) -> Result<Self, LoadError> {
        let records: Vec<ReplayRecord> = read_jsonl(path)?;
        Ok(Self::from_records(records))
    }

    pub fn from_records(records: Vec<ReplayRecord>) -> Self {
        Self {
            responses: records.into_iter().map(|r| (r.id, r.response)).collect(),
        }
    }
}

impl Generator for ReplayGenerator {
    fn generate(&self, example_id: &str, _prompt: &str) -> Result<Generation, LlmError> {
        let text = self
            .responses
            .get(example_id)
            .ok_or_else(|| LlmError::ReplayMiss(example_id.to_string()))?;
        Ok(Generation {
            text: text.clone(),
            log: CallLogEntry {
                request_id: format!("replay-{example_id}"),
                model: "replay".to_string(),
                latency_ms: 0,
                prompt_tokens: 0,
                completion_tokens: 0,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_start_end_markers() {
        assert_eq!(strip_markers("<START>x = a.B({});<END>"), "x = a.B({});");
        assert_eq!(
            strip_markers("preamble <START>\nx = a.B({});\n<END> trailing"),
            "x = a.B({});"
        );
    }

    #[test]
    fn strips_code_fences() {
        assert_eq!(strip_markers("```\nx = a.B({});\n```"), "x = a.B({});");
        assert_eq!(strip_markers("```js\nx = a.B({});\n```"), "x = a.B({});");
    }

    #[test]
    fn passthrough_is_trimmed() {
        assert_eq!(strip_markers("  x = a.B({});  "), "x = a.B({});");
        assert_eq!(strip_markers("x = a.B({});"), "x = a.B({});");
    }

    #[test]
    fn stripping_reaches_a_fixpoint() {
        let nested = "<START>```\nx = a.B({});\n```<END>";
        let once = strip_markers(nested);
        assert_eq!(once, strip_markers(&once));
        assert_eq!(once, "x = a.B({});");
    }

    #[test]
    fn replay_returns_canned_text_or_misses() {
        let generator = ReplayGenerator::from_records(vec![ReplayRecord {
            id: "e1".into(),
            response: "<START>x = a.B({});<END>".into(),
        }]);
        let generation = generator.generate("e1", "ignored").unwrap();
        assert_eq!(strip_markers(&generation.text), "x = a.B({});");
        assert!(matches!(
            generator.generate("missing", "ignored"),
            Err(LlmError::ReplayMiss(_))
        ));
    }
}
