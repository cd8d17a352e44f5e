//! Multi-agent cardiology report engine.
//!
//! Patient bundles (biostatistics, a metrics table and ECG tracing images)
//! flow through three language-model agents: metrics-to-findings,
//! tracings-to-findings and findings-to-interpretation. Interpretations are
//! fact-checked against machine-readable guideline rules, and the result is
//! assembled into an end-of-study report. The [`eval`] module holds the
//! clinical validation tooling.

pub mod domain;
pub mod agent;
pub mod canonical;
pub mod factcheck;
pub mod prompt;
pub mod pipeline;
pub mod report;
pub mod eval;
