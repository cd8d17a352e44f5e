use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::agent::Role;
use crate::domain::{Modality, PatientBundle};
use crate::factcheck::GuidelineSet;
use crate::prompt::{payload_text, render_findings, render_interpretation, PromptTemplates};

/// One supervised example: the role's system text, the patient payload
/// exactly as the agent would receive it, and the adjudicated answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub system: String,
    pub input: String,
    pub output: String,
    /// Tracing image hashes, in order, for image-conditioned roles.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

fn missing(b: &PatientBundle, what: &str) -> EvalError {
    EvalError::MissingAdjudication {
        patient_id: b.patient_id().to_string(),
        what: what.to_string(),
    }
}

/// One record per bundle. M2F maps (metrics, biostatistics) to the metrics
/// findings; T2F maps (tracings, biostatistics) to the tracing findings; F2I
/// maps (findings, guideline citations) to the interpretation.
pub fn export_finetune_dataset(
    bundles: &[PatientBundle],
    role: Role,
    templates: &PromptTemplates,
    guidelines: &GuidelineSet,
) -> Result<Vec<InstructionRecord>, EvalError> {
    let system = templates.get(role)?.system_text.clone();
    bundles
        .iter()
        .map(|b| {
            let findings = b.adjudicated_findings.as_ref().ok_or_else(|| missing(b, "findings"))?;
            let (input, output, images) = match role {
                Role::M2F | Role::T2F => {
                    let modality = if role == Role::M2F { Modality::Metrics } else { Modality::Tracing };
                    let items: Vec<_> = findings.iter().filter(|f| f.source_modality == modality).cloned().collect();
                    if items.is_empty() {
                        return Err(missing(b, &format!("{modality:?} findings").to_lowercase()));
                    }
                    if role == Role::T2F && b.tracings.is_empty() {
                        return Err(missing(b, "tracings"));
                    }
                    let images = if role == Role::T2F {
                        b.tracings.iter().map(|t| t.content_id().to_string()).collect()
                    } else {
                        Vec::new()
                    };
                    (payload_text(templates, role, b, None, guidelines)?, render_findings(&items), images)
                }
                Role::F2I => {
                    let interp = b
                        .adjudicated_interpretation
                        .as_ref()
                        .filter(|i| !i.is_empty())
                        .ok_or_else(|| missing(b, "interpretation"))?;
                    (
                        payload_text(templates, role, b, Some(findings), guidelines)?,
                        render_interpretation(interp),
                        Vec::new(),
                    )
                }
            };
            Ok(InstructionRecord {
                system: system.clone(),
                input,
                output,
                images,
            })
        })
        .collect()
}

/// One JSON object per line.
pub fn to_jsonl(records: &[InstructionRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}
