use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::FactcheckError;
use crate::canonical::content_digest;
use crate::domain::{FindingItem, MetricVocabulary, ParamScalar, ParamValue, ParameterKind};

pub const RULE_SCHEMA_VERSION: u32 = 1;

/// A comparison applied to one finding parameter. Thresholds carry their unit,
/// which must be the parameter's canonical unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", deny_unknown_fields)]
pub enum Predicate {
    #[serde(rename = ">")]
    Gt { threshold: f64, unit: String },
    #[serde(rename = ">=")]
    Ge { threshold: f64, unit: String },
    #[serde(rename = "<")]
    Lt { threshold: f64, unit: String },
    #[serde(rename = "<=")]
    Le { threshold: f64, unit: String },
    /// Inclusive on both ends.
    #[serde(rename = "in_range")]
    InRange { low: f64, high: f64, unit: String },
    #[serde(rename = "equals")]
    Equals {
        value: ParamScalar,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
}

impl Predicate {
    fn unit(&self) -> Option<&str> {
        match self {
            Predicate::Gt { unit, .. }
            | Predicate::Ge { unit, .. }
            | Predicate::Lt { unit, .. }
            | Predicate::Le { unit, .. }
            | Predicate::InRange { unit, .. } => Some(unit),
            Predicate::Equals { unit, .. } => unit.as_deref(),
        }
    }

    /// Evaluates against a finding value, converting units through the
    /// vocabulary. `None` when the value cannot be compared (wrong type or
    /// incompatible unit).
    pub fn evaluate(&self, v: &ParamValue, vocab: &MetricVocabulary) -> Option<bool> {
        let number = |unit: &str| match (&v.value, v.unit.as_deref()) {
            (ParamScalar::Number(x), Some(u)) => vocab.convert(*x, u, unit),
            (ParamScalar::Number(x), None) => Some(*x),
            _ => None,
        };
        Some(match self {
            Predicate::Gt { threshold, unit } => number(unit)? > *threshold,
            Predicate::Ge { threshold, unit } => number(unit)? >= *threshold,
            Predicate::Lt { threshold, unit } => number(unit)? < *threshold,
            Predicate::Le { threshold, unit } => number(unit)? <= *threshold,
            Predicate::InRange { low, high, unit } => {
                let x = number(unit)?;
                *low <= x && x <= *high
            }
            Predicate::Equals { value, unit } => match (value, &v.value) {
                (ParamScalar::Number(t), ParamScalar::Number(_)) => {
                    number(unit.as_deref().unwrap_or_default())? == *t
                }
                (ParamScalar::Bool(a), ParamScalar::Bool(b)) => a == b,
                (ParamScalar::Text(a), ParamScalar::Text(b)) => a.eq_ignore_ascii_case(b),
                _ => return None,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Advisory,
    Mandatory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidelineRule {
    pub id: String,
    pub parameter: String,
    pub predicate: Predicate,
    pub required_tag: String,
    pub guideline_text: String,
    pub severity: Severity,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    schema_version: u32,
    #[serde(default)]
    exhaustive: bool,
    rules: Vec<GuidelineRule>,
}

/// A validated rule set. Its version is the content hash of the rules.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidelineSet {
    exhaustive: bool,
    rules: Vec<GuidelineRule>,
    version: String,
}

const BUILTIN: &str = include_str!("../../data/guidelines.json");

fn schema_err(rule: &GuidelineRule, field: &str, message: impl Into<String>) -> FactcheckError {
    FactcheckError::RuleSchema {
        rule_id: rule.id.clone(),
        field: field.into(),
        message: message.into(),
    }
}

fn validate_rule(rule: &GuidelineRule, vocab: &MetricVocabulary) -> Result<(), FactcheckError> {
    if rule.id.trim().is_empty() {
        return Err(schema_err(rule, "id", "must be non-empty"));
    }
    let param = vocab
        .parameter(&rule.parameter)
        .ok_or_else(|| schema_err(rule, "parameter", format!("unknown parameter {}", rule.parameter)))?;
    if rule.required_tag.trim().is_empty() {
        return Err(schema_err(rule, "required_tag", "must be non-empty"));
    }
    if rule.guideline_text.trim().is_empty() {
        return Err(schema_err(rule, "guideline_text", "must be non-empty"));
    }
    match (&rule.predicate, param.kind) {
        (Predicate::Equals { value: ParamScalar::Bool(_), .. }, ParameterKind::Bool) => {}
        (Predicate::Equals { value: ParamScalar::Text(_), .. }, _) => {}
        (_, ParameterKind::Bool) => {
            return Err(schema_err(rule, "predicate", "boolean parameters only support `equals` true/false"))
        }
        (Predicate::Equals { value: ParamScalar::Bool(_), .. }, ParameterKind::Number) => {
            return Err(schema_err(rule, "predicate", "numeric parameter compared with a boolean"))
        }
        (Predicate::InRange { low, high, .. }, _) if low > high => {
            return Err(schema_err(rule, "predicate", "in_range low exceeds high"))
        }
        _ => {}
    }
    if param.kind == ParameterKind::Number {
        let canonical = param.unit.as_deref().unwrap_or_default();
        let given = rule.predicate.unit().map(|u| vocab.normalize_unit(u));
        if given.as_deref() != Some(canonical) {
            return Err(schema_err(
                rule,
                "predicate.unit",
                format!(
                    "{} is measured in {canonical}, rule uses {}",
                    rule.parameter,
                    rule.predicate.unit().unwrap_or("no unit")
                ),
            ));
        }
    }
    Ok(())
}

/// Parses and validates a guideline rule file.
pub fn load_guidelines(raw: &str, vocab: &MetricVocabulary) -> Result<GuidelineSet, FactcheckError> {
    let file: RuleFile = serde_json::from_str(raw).map_err(|e| FactcheckError::Parse(e.to_string()))?;
    if file.schema_version != RULE_SCHEMA_VERSION {
        return Err(FactcheckError::Parse(format!(
            "unsupported schema_version {} (expected {RULE_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    GuidelineSet::new(file.rules, file.exhaustive, vocab)
}

impl GuidelineSet {
    pub fn new(rules: Vec<GuidelineRule>, exhaustive: bool, vocab: &MetricVocabulary) -> Result<Self, FactcheckError> {
        let mut ids = BTreeSet::new();
        for rule in &rules {
            validate_rule(rule, vocab)?;
            if !ids.insert(rule.id.as_str()) {
                return Err(schema_err(rule, "id", "duplicate rule id"));
            }
        }
        let version = content_digest(&(exhaustive, &rules));
        Ok(Self {
            exhaustive,
            rules,
            version,
        })
    }

    pub fn builtin() -> Self {
        load_guidelines(BUILTIN, &MetricVocabulary::builtin()).expect("shipped guidelines are valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn exhaustive(&self) -> bool {
        self.exhaustive
    }

    pub fn rules(&self) -> &[GuidelineRule] {
        &self.rules
    }

    pub fn rule(&self, id: &str) -> Option<&GuidelineRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Rules whose parameter appears in some finding, ordered by id.
    pub fn citations_for<'a>(&'a self, findings: &'a [FindingItem]) -> impl Iterator<Item = &'a GuidelineRule> {
        let mut cited: Vec<&GuidelineRule> = self
            .rules
            .iter()
            .filter(|r| findings.iter().any(|f| f.parameters.contains_key(&r.parameter)))
            .collect();
        cited.sort_by(|a, b| a.id.cmp(&b.id));
        cited.into_iter()
    }

    /// The rule file form, which [`load_guidelines`] reads back unchanged.
    pub fn to_json(&self) -> String {
        let file = RuleFile {
            schema_version: RULE_SCHEMA_VERSION,
            exhaustive: self.exhaustive,
            rules: self.rules.clone(),
        };
        serde_json::to_string_pretty(&file).expect("rules serialize")
    }
}
