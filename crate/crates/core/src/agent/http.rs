//! Chat-completion client for OpenAI-compatible endpoints.

use std::fs;
use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentError, ChatBackend, ChatMessage, ChatRole, ContentPart, GenerationParams};

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    /// Full URL of the chat-completions route.
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is read per request and never stored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles per attempt, capped at 8 s.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl HttpSettings {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

/// Blocking HTTP backend with exponential-backoff retries on timeouts,
/// connection failures and 5xx responses. 4xx responses are final.
#[derive(Debug)]
pub struct HttpBackend {
    settings: HttpSettings,
    // Built lazily so construction is safe inside an async runtime.
    client: OnceLock<Result<reqwest::blocking::Client, String>>,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, AgentError> {
        if settings.endpoint_url.trim().is_empty() {
            return Err(AgentError::Config("endpoint_url must be set".into()));
        }
        Ok(Self {
            settings,
            client: OnceLock::new(),
        })
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, AgentError> {
        self.client
            .get_or_init(|| {
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_millis(self.settings.timeout_ms))
                    .build()
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| AgentError::Config(format!("cannot build HTTP client: {e}")))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .settings
            .backoff_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(8_000);
        Duration::from_millis(ms)
    }

    fn attempt(&self, body: &Value, attempts: u32) -> Result<String, AgentError> {
        let mut req = self.client()?.post(&self.settings.endpoint_url).json(body);
        if let Some(var) = &self.settings.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| AgentError::Config(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| classify(e, attempts))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| classify(e, attempts))?;
        if !status.is_success() {
            return Err(AgentError::BadStatus {
                code: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        extract_content(&text)
    }
}

fn classify(e: reqwest::Error, attempts: u32) -> AgentError {
    if e.is_timeout() {
        AgentError::Timeout { attempts }
    } else {
        AgentError::Transport {
            attempts,
            message: e.to_string(),
        }
    }
}

fn extract_content(body: &str) -> Result<String, AgentError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| AgentError::MalformedResponse(format!("not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| AgentError::MalformedResponse("missing choices[0].message.content".into()))
}

fn sniff_mime(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        "image/jpeg"
    } else if bytes.starts_with(b"GIF8") {
        "image/gif"
    } else if bytes.len() > 12 && &bytes[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

/// Builds the JSON request body in the common chat-completion shape.
pub(crate) fn request_body(
    model: &str,
    messages: &[ChatMessage],
    params: &GenerationParams,
) -> Result<Value, AgentError> {
    let mut wire = Vec::with_capacity(messages.len());
    for m in messages {
        let role = match m.role {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        };
        let content = if m.images().next().is_none() {
            Value::String(m.text())
        } else {
            let mut parts = Vec::new();
            for p in &m.parts {
                match p {
                    ContentPart::Text { text } => parts.push(json!({"type": "text", "text": text})),
                    ContentPart::Image {
                        image_ref,
                        local_path,
                        ..
                    } => {
                        let path = local_path.as_ref().ok_or_else(|| {
                            AgentError::InvalidRequest(format!("no local copy of image {image_ref}"))
                        })?;
                        let bytes = fs::read(path).map_err(|e| {
                            AgentError::InvalidRequest(format!("cannot read {}: {e}", path.display()))
                        })?;
                        let url = format!(
                            "data:{};base64,{}",
                            sniff_mime(&bytes),
                            base64::engine::general_purpose::STANDARD.encode(&bytes)
                        );
                        parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
                    }
                }
            }
            Value::Array(parts)
        };
        wire.push(json!({"role": role, "content": content}));
    }
    let mut body = json!({
        "model": model,
        "messages": wire,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    });
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    Ok(body)
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        model: &str,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, AgentError> {
        let body = request_body(model, messages, params)?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.attempt(&body, attempt) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && attempt <= self.settings.max_retries => {
                    thread::sleep(self.backoff(attempt - 1));
                }
                Err(e) => return Err(e),
            }
        }
    }
}
