use std::fmt;

use serde::{Deserialize, Serialize};

/// Lifecycle of one report job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum JobState {
    Queued,
    RunningFindings,
    RunningInterpretation,
    FactChecking,
    Regenerating { iteration: u32 },
    Complete,
    NeedsManualReview,
    Failed { reason: String },
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            JobState::Complete | JobState::NeedsManualReview | JobState::Failed { .. }
        )
    }

    pub fn is_running(&self) -> bool {
        matches!(
            self,
            JobState::RunningFindings
                | JobState::RunningInterpretation
                | JobState::FactChecking
                | JobState::Regenerating { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            JobState::Queued => "Queued",
            JobState::RunningFindings => "RunningFindings",
            JobState::RunningInterpretation => "RunningInterpretation",
            JobState::FactChecking => "FactChecking",
            JobState::Regenerating { .. } => "Regenerating",
            JobState::Complete => "Complete",
            JobState::NeedsManualReview => "NeedsManualReview",
            JobState::Failed { .. } => "Failed",
        }
    }

    /// Whether `self -> next` is a legal transition.
    pub fn can_transition_to(&self, next: &JobState) -> bool {
        use JobState::*;
        if matches!(next, Failed { .. }) {
            return self.is_running() || *self == Queued;
        }
        match (self, next) {
            (Queued, RunningFindings) => true,
            (RunningFindings, RunningInterpretation) => true,
            (RunningInterpretation, FactChecking) => true,
            (FactChecking, Complete | NeedsManualReview) => true,
            (FactChecking, Regenerating { iteration }) => *iteration >= 1,
            (Regenerating { .. }, RunningInterpretation | RunningFindings | NeedsManualReview) => true,
            _ => false,
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JobState::Regenerating { iteration } => write!(f, "Regenerating({iteration})"),
            JobState::Failed { reason } => write!(f, "Failed({reason})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Checks that a sequence of states only takes legal steps, starting from
/// `Queued`. Returns the index of the first illegal state.
pub fn validate_transitions(states: &[JobState]) -> Result<(), usize> {
    if states.first().is_some_and(|s| *s != JobState::Queued) {
        return Err(0);
    }
    for (i, w) in states.windows(2).enumerate() {
        if !w[0].can_transition_to(&w[1]) {
            return Err(i + 1);
        }
    }
    Ok(())
}
