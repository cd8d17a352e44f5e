use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::format_number;

/// Which patient-data modality a finding was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Metrics,
    Tracing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamScalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl fmt::Display for ParamScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamScalar::Bool(b) => write!(f, "{b}"),
            ParamScalar::Number(v) => f.write_str(&format_number(*v)),
            ParamScalar::Text(s) => f.write_str(s),
        }
    }
}

/// A parameter value extracted from a finding statement, in canonical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub value: ParamScalar,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl ParamValue {
    pub fn number(value: f64, unit: impl Into<String>) -> Self {
        Self {
            value: ParamScalar::Number(value),
            unit: Some(unit.into()),
        }
    }

    pub fn flag(value: bool) -> Self {
        Self {
            value: ParamScalar::Bool(value),
            unit: None,
        }
    }
}

/// One itemized clinical finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingItem {
    pub id: String,
    pub statement: String,
    pub source_modality: Modality,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub agent_iteration: u32,
}

/// One itemized diagnostic statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationItem {
    pub id: String,
    pub statement: String,
    #[serde(default)]
    pub diagnosis_tags: BTreeSet<String>,
    /// Ids of the findings this statement rests on.
    #[serde(default)]
    pub supports: Vec<String>,
    #[serde(default)]
    pub agent_iteration: u32,
}
