use std::path::{Path, PathBuf};

use super::demos::Demo;
use super::templates::PromptTemplates;
use super::PromptError;
use crate::agent::{ChatMessage, ChatRole, ContentPart, Role};
use crate::domain::{format_number, FindingItem, PatientBundle, Tracing};
use crate::factcheck::GuidelineSet;

/// Finds tracing image files on disk so HTTP backends can inline them.
#[derive(Debug, Clone, Default)]
pub struct ImageLocator {
    search_dirs: Vec<PathBuf>,
}

impl ImageLocator {
    pub fn new(search_dirs: impl IntoIterator<Item = PathBuf>) -> Self {
        Self {
            search_dirs: search_dirs.into_iter().collect(),
        }
    }

    /// Tries the reference as given, then under each search directory, then
    /// the bare hash (with common image extensions) under each directory.
    pub fn locate(&self, tracing: &Tracing) -> Option<PathBuf> {
        let direct = Path::new(&tracing.image_ref);
        if direct.is_absolute() && direct.is_file() {
            return Some(direct.to_path_buf());
        }
        let hex = tracing
            .image_hash
            .as_deref()
            .map(|h| h.trim_start_matches("sha256:").to_string());
        for dir in &self.search_dirs {
            let candidate = dir.join(&tracing.image_ref);
            if candidate.is_file() {
                return Some(candidate);
            }
            if let Some(hex) = &hex {
                for name in [hex.clone(), format!("{hex}.png"), format!("{hex}.jpg"), format!("{hex}.jpeg")] {
                    let candidate = dir.join(name);
                    if candidate.is_file() {
                        return Some(candidate);
                    }
                }
            }
        }
        None
    }
}

fn biostatistics_block(bundle: &PatientBundle) -> String {
    let b = &bundle.biostatistics;
    format!(
        "Biostatistics:\n- Gender: {}\n- Age: {} years\n- Monitoring period: {} hours",
        b.gender,
        b.age_years,
        format_number(b.monitoring_hours)
    )
}

fn tracing_line(i: usize, t: &Tracing) -> String {
    format!(
        "- Tracing {}: {} ({} s)",
        i + 1,
        t.caption,
        format_number(t.duration_seconds)
    )
}

/// The role's view of the patient data: (M, B) for M2F, (T, B) for T2F and
/// (F, G) for F2I. Every metric row and finding statement appears verbatim.
pub fn render_input(
    role: Role,
    bundle: &PatientBundle,
    upstream: Option<&[FindingItem]>,
    guidelines: &GuidelineSet,
) -> Result<String, PromptError> {
    let mut out = String::new();
    match role {
        Role::M2F => {
            out.push_str(&biostatistics_block(bundle));
            out.push_str("\n\nMetrics:");
            for row in &bundle.metrics.rows {
                out.push_str("\n- ");
                out.push_str(&row.render());
            }
        }
        Role::T2F => {
            out.push_str(&biostatistics_block(bundle));
            out.push_str("\n\nTracings:");
            for (i, t) in bundle.tracings.iter().enumerate() {
                out.push('\n');
                out.push_str(&tracing_line(i, t));
            }
        }
        Role::F2I => {
            let findings = upstream.ok_or(PromptError::MissingUpstream)?;
            out.push_str("Findings:");
            for f in findings {
                out.push_str(&format!("\n- [{}] {}", f.id, f.statement));
            }
            out.push_str("\n\nClinical guidelines:");
            let cited: Vec<_> = guidelines.citations_for(findings).collect();
            if cited.is_empty() {
                out.push_str("\n- No guideline rule applies to these findings.");
            }
            for rule in cited {
                out.push_str(&format!("\n- [{}] {}", rule.id, rule.guideline_text));
            }
        }
    }
    Ok(out)
}

/// The final user message text: the role's input followed by the skeleton.
pub fn payload_text(
    templates: &PromptTemplates,
    role: Role,
    bundle: &PatientBundle,
    upstream: Option<&[FindingItem]>,
    guidelines: &GuidelineSet,
) -> Result<String, PromptError> {
    let template = templates.get(role)?;
    Ok(format!(
        "{}\n\nRespond in the following format:\n{}",
        render_input(role, bundle, upstream, guidelines)?,
        template.response_skeleton
    ))
}

fn demo_text(i: usize, demo: &Demo) -> String {
    format!(
        "Example {}:\n{}\n\nExample response:\n{}",
        i + 1,
        demo.input_excerpt,
        demo.adjudicated_output
    )
}

/// Assembles agent prompts.
#[derive(Debug, Clone, Copy)]
pub struct PromptBuilder<'a> {
    pub templates: &'a PromptTemplates,
    pub guidelines: &'a GuidelineSet,
    pub images: &'a ImageLocator,
}

impl PromptBuilder<'_> {
    /// `[system] + [user(demo)]... + [user(payload)]`. For T2F the payload
    /// message carries one image part per tracing, in tracing order.
    pub fn build_prompt(
        &self,
        role: Role,
        bundle: &PatientBundle,
        demos: &[Demo],
        upstream: Option<&[FindingItem]>,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let template = self.templates.get(role)?;
        let mut messages = Vec::with_capacity(demos.len() + 2);
        messages.push(ChatMessage::system(template.system_text.clone()));
        messages.extend(demos.iter().enumerate().map(|(i, d)| ChatMessage::user(demo_text(i, d))));
        let mut parts = vec![ContentPart::text(payload_text(
            self.templates,
            role,
            bundle,
            upstream,
            self.guidelines,
        )?)];
        if role == Role::T2F {
            parts.extend(bundle.tracings.iter().map(|t| ContentPart::Image {
                image_ref: t.image_ref.clone(),
                image_hash: t.content_id().to_string(),
                local_path: self.images.locate(t),
            }));
        }
        messages.push(ChatMessage {
            role: ChatRole::User,
            parts,
        });
        Ok(messages)
    }
}
