use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Report, ReportError};
use crate::prompt::ItemParser;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    #[default]
    Preliminary,
    Reviewed,
    Signed,
}

impl fmt::Display for ReviewStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReviewStatus::Preliminary => "preliminary",
            ReviewStatus::Reviewed => "reviewed",
            ReviewStatus::Signed => "signed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditSection {
    Finding,
    Interpretation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditTarget {
    pub section: EditSection,
    pub item_id: String,
}

/// One reviewer change to an item's text. Edits are only ever appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEdit {
    pub target: EditTarget,
    pub old_text: String,
    pub new_text: String,
    pub editor_id: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub status: ReviewStatus,
    pub edits: Vec<ItemEdit>,
    pub reviewer_id: Option<String>,
    pub reviewed_at: Option<String>,
}

/// Applies an edit: the item's text must still equal `old_text`. The item's
/// parameters (findings) or tags and supports (interpretation) are re-derived
/// from the new text.
pub fn apply_edit(report: &mut Report, edit: ItemEdit, parser: &ItemParser) -> Result<(), ReportError> {
    if report.review.status == ReviewStatus::Signed {
        return Err(ReportError::Signed);
    }
    let id = edit.target.item_id.clone();
    let unknown = |section: &str| ReportError::UnknownItem {
        section: section.into(),
        id: id.clone(),
    };
    match edit.target.section {
        EditSection::Finding => {
            let item = report
                .findings
                .iter_mut()
                .find(|f| f.id == id)
                .ok_or_else(|| unknown("finding"))?;
            if item.statement != edit.old_text {
                return Err(ReportError::OldTextMismatch {
                    id,
                    current: item.statement.clone(),
                });
            }
            let updated = parser.finding(item.id.clone(), &edit.new_text, item.source_modality, item.agent_iteration);
            *item = updated;
        }
        EditSection::Interpretation => {
            let item = report
                .interpretation
                .iter_mut()
                .find(|i| i.id == id)
                .ok_or_else(|| unknown("interpretation"))?;
            if item.statement != edit.old_text {
                return Err(ReportError::OldTextMismatch {
                    id,
                    current: item.statement.clone(),
                });
            }
            let mut updated = parser.interpretation(item.id.clone(), &edit.new_text, item.agent_iteration);
            if updated.supports.is_empty() {
                updated.supports = item.supports.clone();
            }
            *item = updated;
        }
    }
    report.review.edits.push(edit);
    Ok(())
}

/// Moves the review status forward: preliminary -> reviewed -> signed.
pub fn set_status(
    report: &mut Report,
    to: ReviewStatus,
    reviewer_id: &str,
    at: &str,
) -> Result<(), ReportError> {
    let from = report.review.status;
    let legal = matches!(
        (from, to),
        (ReviewStatus::Preliminary, ReviewStatus::Reviewed) | (ReviewStatus::Reviewed, ReviewStatus::Signed)
    );
    if !legal {
        return Err(ReportError::IllegalTransition { from, to });
    }
    report.review.status = to;
    report.review.reviewer_id = Some(reviewer_id.to_string());
    report.review.reviewed_at = Some(at.to_string());
    Ok(())
}
