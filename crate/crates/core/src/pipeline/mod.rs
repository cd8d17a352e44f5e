//! End-to-end report generation: findings from both modalities, the
//! interpretation, the fact-check and regeneration loop, and assembly.

mod clock;
mod config;
mod engine;
mod state;
mod trace;

pub use clock::{format_time, Clock, FixedClock, SystemClock};
pub use config::{PipelineConfig, RunSettings};
pub use engine::{union_findings, FindingsOutcome, Pipeline, PipelineOutcome};
pub use state::{validate_transitions, JobState};
pub use trace::{PipelineTrace, TraceEvent};

use thiserror::Error;

use crate::agent::{AgentError, Role};
use crate::domain::DomainError;
use crate::factcheck::FactcheckError;
use crate::prompt::PromptError;
use crate::report::ReportError;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{role} agent failed: {source}")]
    Agent { role: Role, source: AgentError },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Factcheck(#[from] FactcheckError),
    #[error(transparent)]
    Report(#[from] ReportError),
}
