use serde::{Deserialize, Serialize};

use super::JobState;
use crate::agent::{ChatMessage, Role};
use crate::factcheck::Violation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    State {
        at: String,
        state: JobState,
    },
    AgentCall {
        at: String,
        role: Role,
        iteration: u32,
        /// Demo ids included in the prompt.
        demo_ids: Vec<String>,
        messages: Vec<ChatMessage>,
        completion: Option<String>,
        error: Option<String>,
    },
    Warning {
        at: String,
        message: String,
    },
    FactCheck {
        at: String,
        iteration: u32,
        violations: Vec<Violation>,
    },
}

/// Append-only record of one job: states, raw prompts and completions,
/// fact-check results and warnings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    events: Vec<TraceEvent>,
}

impl PipelineTrace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// The state sequence, starting with `Queued`.
    pub fn states(&self) -> Vec<JobState> {
        std::iter::once(JobState::Queued)
            .chain(self.events.iter().filter_map(|e| match e {
                TraceEvent::State { state, .. } => Some(state.clone()),
                _ => None,
            }))
            .collect()
    }

    pub fn agent_calls(&self, role: Role) -> impl Iterator<Item = &TraceEvent> {
        self.events
            .iter()
            .filter(move |e| matches!(e, TraceEvent::AgentCall { role: r, .. } if *r == role))
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Warning { message, .. } => Some(message.as_str()),
            _ => None,
        })
    }
}
