use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::agent::Role;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: Role,
    pub system_text: String,
    /// Section header plus placeholder items showing the expected format.
    pub response_skeleton: String,
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    version: u32,
    item_marker: String,
    templates: Vec<PromptTemplate>,
}

/// Templates for all three roles, checked at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    version: u32,
    item_marker: String,
    by_role: BTreeMap<Role, PromptTemplate>,
}

const BUILTIN: &str = include_str!("../../data/prompt_templates.json");

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("shipped prompt templates are valid")
    }

    pub fn from_json(raw: &str) -> Result<Self, PromptError> {
        let file: TemplateFile = serde_json::from_str(raw)
            .map_err(|e| PromptError::Data(format!("prompt templates: {e}")))?;
        let mut by_role = BTreeMap::new();
        for t in file.templates {
            let marker = file.item_marker.trim_end();
            if !t.response_skeleton.lines().any(|l| l.trim_start().starts_with(marker)) {
                return Err(PromptError::Data(format!(
                    "{} response skeleton has no `{}` item lines",
                    t.role, file.item_marker
                )));
            }
            if by_role.insert(t.role, t.clone()).is_some() {
                return Err(PromptError::Data(format!("duplicate template for {}", t.role)));
            }
        }
        if let Some(missing) = Role::ALL.into_iter().find(|r| !by_role.contains_key(r)) {
            return Err(PromptError::TemplateMissing(missing));
        }
        Ok(Self {
            version: file.version,
            item_marker: file.item_marker,
            by_role,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn item_marker(&self) -> &str {
        &self.item_marker
    }

    pub fn get(&self, role: Role) -> Result<&PromptTemplate, PromptError> {
        self.by_role.get(&role).ok_or(PromptError::TemplateMissing(role))
    }
}
