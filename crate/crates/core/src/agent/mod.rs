//! Chat-generation abstraction over model backends.
//!
//! An [`Agent`] pairs an [`AgentConfig`] with a live backend. Two backend
//! kinds exist: an HTTP chat-completion client and a scripted table used in
//! tests and golden runs.

mod fingerprint;
mod http;
mod scripted;

pub use fingerprint::fingerprint;
pub use http::{HttpBackend, HttpSettings};
pub use scripted::{ScriptTable, ScriptedBackend};

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three agents of the diagnostic workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Metrics (and biostatistics) to findings.
    M2F,
    /// Tracing images (and biostatistics) to findings.
    T2F,
    /// Findings (and guidelines) to interpretation.
    F2I,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::M2F, Role::T2F, Role::F2I];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::M2F => "M2F",
            Role::T2F => "T2F",
            Role::F2I => "F2I",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "M2F" => Ok(Role::M2F),
            "T2F" => Ok(Role::T2F),
            "F2I" => Ok(Role::F2I),
            other => Err(format!("unknown role `{other}` (expected M2F, T2F or F2I)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContentPart {
    Text {
        text: String,
    },
    Image {
        image_ref: String,
        image_hash: String,
        /// Where the bytes can be read from when the backend needs them.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        local_path: Option<PathBuf>,
    },
}

impl ContentPart {
    pub fn text(text: impl Into<String>) -> Self {
        ContentPart::Text { text: text.into() }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ContentPart::Text { text } => Some(text),
            ContentPart::Image { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            parts: vec![ContentPart::text(text)],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            parts: vec![ContentPart::text(text)],
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            parts: vec![ContentPart::text(text)],
        }
    }

    /// All text parts joined with newlines.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(ContentPart::as_text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &ContentPart> {
        self.parts
            .iter()
            .filter(|p| matches!(p, ContentPart::Image { .. }))
    }
}

/// Decoding parameters. Defaults favour determinism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            seed: Some(0),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default)]
    pub vision: bool,
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendHandle {
    Http(HttpSettings),
    Scripted {
        table: ScriptTable,
        /// Artificial delay before answering; does not affect the output.
        #[serde(default)]
        latency_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub role: Role,
    pub backend: BackendHandle,
    pub model_name: String,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default)]
    pub capabilities: Capabilities,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.role == Role::T2F && !self.capabilities.vision {
            return Err(AgentError::Config(
                "the T2F agent requires a vision-capable backend".into(),
            ));
        }
        if self.params.temperature < 0.0 || !self.params.temperature.is_finite() {
            return Err(AgentError::Config("temperature must be >= 0".into()));
        }
        if self.params.max_tokens == 0 {
            return Err(AgentError::Config("max_tokens must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {code}: {body}")]
    BadStatus { code: u16, body: String },
    #[error("image content sent to a backend without vision capability")]
    UnsupportedModality,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted completion for fingerprint {fingerprint}")]
    ScriptMiss { fingerprint: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("agent configuration error: {0}")]
    Config(String),
}

impl AgentError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            AgentError::Timeout { .. } | AgentError::Transport { .. } => true,
            AgentError::BadStatus { code, .. } => *code >= 500,
            _ => false,
        }
    }
}

/// A source of chat completions.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        model: &str,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, AgentError>;
}

/// A configured agent bound to its backend.
#[derive(Clone)]
pub struct Agent {
    config: AgentConfig,
    backend: Arc<dyn ChatBackend>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent").field("config", &self.config).finish()
    }
}

impl Agent {
    pub fn from_config(config: AgentConfig) -> Result<Self, AgentError> {
        config.validate()?;
        let backend: Arc<dyn ChatBackend> = match &config.backend {
            BackendHandle::Http(settings) => Arc::new(HttpBackend::new(settings.clone())?),
            BackendHandle::Scripted { table, latency_ms } => {
                Arc::new(ScriptedBackend::new(table.clone()).with_latency_ms(*latency_ms))
            }
        };
        Ok(Self { config, backend })
    }

    /// Binds a config to an explicit backend, bypassing `config.backend`.
    pub fn with_backend(config: AgentConfig, backend: Arc<dyn ChatBackend>) -> Result<Self, AgentError> {
        config.validate()?;
        Ok(Self { config, backend })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn role(&self) -> Role {
        self.config.role
    }

    pub fn generate(&self, messages: &[ChatMessage]) -> Result<String, AgentError> {
        check_messages(&self.config, messages)?;
        self.backend
            .complete(&self.config.model_name, messages, &self.config.params)
    }
}

/// One-shot generation straight from a config.
pub fn generate(config: &AgentConfig, messages: &[ChatMessage]) -> Result<String, AgentError> {
    check_messages(config, messages)?;
    Agent::from_config(config.clone())?.generate(messages)
}

fn check_messages(config: &AgentConfig, messages: &[ChatMessage]) -> Result<(), AgentError> {
    let first = messages
        .first()
        .ok_or_else(|| AgentError::InvalidRequest("no messages".into()))?;
    if first.role != ChatRole::System {
        return Err(AgentError::InvalidRequest(
            "the first message must be the system prompt".into(),
        ));
    }
    if let Some(m) = messages.iter().find(|m| m.parts.is_empty()) {
        return Err(AgentError::InvalidRequest(format!(
            "{:?} message has no content parts",
            m.role
        )));
    }
    if !config.capabilities.vision && messages.iter().any(|m| m.images().next().is_some()) {
        return Err(AgentError::UnsupportedModality);
    }
    Ok(())
}
