//! Guideline rules and the rule-based check of interpretations against findings.
//!
//! A rule links a finding parameter predicate (for example PR interval above
//! 200 ms) to a diagnosis tag that the interpretation must then contain.
//! [`FactChecker::check`] reports missing, contradicted and unsupported
//! diagnoses, each with an instruction for the agent that should fix it.

mod check;
mod rules;

pub use check::{check, regeneration_instruction, FactChecker, Violation, ViolationKind};
pub use rules::{load_guidelines, GuidelineRule, GuidelineSet, Predicate, Severity, RULE_SCHEMA_VERSION};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactcheckError {
    #[error("guideline file does not parse: {0}")]
    Parse(String),
    #[error("rule {rule_id}: invalid {field}: {message}")]
    RuleSchema {
        rule_id: String,
        field: String,
        message: String,
    },
}
