use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{fingerprint, AgentError, ChatBackend, ChatMessage, GenerationParams};

/// Completion table for the scripted backend, stored as a JSON object.
///
/// Keys are matched in this order:
/// 1. a request fingerprint (64 hex digits), exactly;
/// 2. content rules `contains:<text>`, optionally joined with ` && `; a rule
///    matches when every fragment occurs in the request's text. Rules with
///    more fragments are tried first, ties broken by key order;
/// 3. the key `default`.
///
/// Lookup depends only on the request, so the backend is a pure function.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptTable {
    entries: BTreeMap<String, String>,
}

impl ScriptTable {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }

    pub fn from_json(raw: &str) -> Result<Self, AgentError> {
        serde_json::from_str(raw)
            .map_err(|e| AgentError::Config(format!("invalid script table: {e}")))
    }

    pub fn insert(&mut self, key: impl Into<String>, completion: impl Into<String>) {
        self.entries.insert(key.into(), completion.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<&str, AgentError> {
        let fp = fingerprint(messages, params);
        if let Some(hit) = self.entries.get(&fp) {
            return Ok(hit);
        }
        let haystack = messages
            .iter()
            .map(ChatMessage::text)
            .collect::<Vec<_>>()
            .join("\n");
        let mut rules: Vec<(Vec<&str>, &String, &String)> = self
            .entries
            .iter()
            .filter_map(|(k, v)| parse_rule(k).map(|frags| (frags, k, v)))
            .collect();
        rules.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.1.cmp(b.1)));
        if let Some((_, _, v)) = rules
            .iter()
            .find(|(frags, _, _)| frags.iter().all(|f| haystack.contains(f)))
        {
            return Ok(v);
        }
        self.entries
            .get("default")
            .map(String::as_str)
            .ok_or(AgentError::ScriptMiss { fingerprint: fp })
    }
}

fn parse_rule(key: &str) -> Option<Vec<&str>> {
    key.split(" && ")
        .map(|frag| frag.strip_prefix("contains:"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    table: ScriptTable,
    latency: Duration,
}

impl ScriptedBackend {
    pub fn new(table: ScriptTable) -> Self {
        Self {
            table,
            latency: Duration::ZERO,
        }
    }

    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency = Duration::from_millis(ms);
        self
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        _model: &str,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, AgentError> {
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        self.table.lookup(messages, params).map(str::to_string)
    }
}
