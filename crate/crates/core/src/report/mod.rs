//! The end-of-study report: assembly, rendering and cardiologist review.
//!
//! JSON is the canonical persisted form. Text and HTML renders follow the
//! report layout: header, metrics table, tracing panels, findings,
//! interpretation and the signature block.

mod render;
mod review;

pub use render::{parse_report, render, RenderFormat};
pub use review::{apply_edit, set_status, EditSection, EditTarget, ItemEdit, Review, ReviewStatus};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Role;
use crate::domain::{
    Biostatistics, FindingItem, InterpretationItem, MetricsTable, PatientBundle, Tracing,
};
use crate::factcheck::Violation;
use crate::pipeline::JobState;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("report section {0} is missing or empty")]
    MissingSection(&'static str),
    #[error("unknown render format `{0}` (expected json, text or html)")]
    UnknownFormat(String),
    #[error("report does not parse: {0}")]
    Parse(String),
    #[error("no {section} item with id {id}")]
    UnknownItem { section: String, id: String },
    #[error("old_text does not match the current text of {id}")]
    OldTextMismatch { id: String, current: String },
    #[error("review status cannot go from {from} to {to}")]
    IllegalTransition { from: ReviewStatus, to: ReviewStatus },
    #[error("a signed report cannot be edited")]
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub engine_version: String,
    pub model_names: BTreeMap<Role, String>,
    pub guideline_set_version: String,
    pub demo_ids: BTreeMap<Role, Vec<String>>,
    pub factcheck_iterations: u32,
    pub state: JobState,
    /// One of the findings agents failed and the report rests on the other.
    #[serde(default)]
    pub degraded: bool,
    /// RFC 3339 timestamp.
    pub created_at: String,
}

/// A report for one patient: sections (B, M, T, F, I) plus metadata and
/// review history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub patient: Biostatistics,
    pub metrics: MetricsTable,
    pub tracings: Vec<Tracing>,
    pub findings: Vec<FindingItem>,
    pub interpretation: Vec<InterpretationItem>,
    /// Fact-check results still open when the report was assembled.
    pub violations: Vec<Violation>,
    pub meta: ReportMeta,
    pub review: Review,
}

impl Report {
    pub fn patient_id(&self) -> &str {
        &self.patient.patient_id
    }
}

/// Builds a preliminary report. Complete and NeedsManualReview reports must
/// carry findings and an interpretation.
pub fn assemble(
    bundle: &PatientBundle,
    findings: Vec<FindingItem>,
    interpretation: Vec<InterpretationItem>,
    violations: Vec<Violation>,
    meta: ReportMeta,
) -> Result<Report, ReportError> {
    if matches!(meta.state, JobState::Complete | JobState::NeedsManualReview) {
        if findings.is_empty() {
            return Err(ReportError::MissingSection("findings"));
        }
        if interpretation.is_empty() {
            return Err(ReportError::MissingSection("interpretation"));
        }
    }
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        patient: bundle.biostatistics.clone(),
        metrics: bundle.metrics.clone(),
        tracings: bundle.tracings.clone(),
        findings,
        interpretation,
        violations,
        meta,
        review: Review::default(),
    })
}
