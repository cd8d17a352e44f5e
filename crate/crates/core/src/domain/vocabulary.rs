use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DomainError, MetricRow, MetricValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterKind {
    Number,
    Bool,
}

/// A canonical clinical parameter that findings may carry, e.g. `PR_INTERVAL_MS`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub unit: Option<String>,
    pub kind: ParameterKind,
}

/// A canonical metrics-table attribute with its unit and valid range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub attribute: String,
    pub unit: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub parameter: Option<String>,
}

#[derive(Debug, Deserialize)]
struct VocabularyFile {
    version: u32,
    unit_aliases: BTreeMap<String, String>,
    duration_units: BTreeMap<String, f64>,
    parameters: Vec<ParameterSpec>,
    attributes: Vec<AttributeSpec>,
}

/// Canonical metric attributes, finding parameters and unit aliases.
#[derive(Debug, Clone)]
pub struct MetricVocabulary {
    version: u32,
    unit_aliases: BTreeMap<String, String>,
    /// Seconds per unit for time units.
    duration_units: BTreeMap<String, f64>,
    parameters: BTreeMap<String, ParameterSpec>,
    attributes: BTreeMap<String, AttributeSpec>,
}

const BUILTIN: &str = include_str!("../../data/metric_vocabulary.json");

impl MetricVocabulary {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("shipped metric vocabulary is valid")
    }

    pub fn from_json(raw: &str) -> Result<Self, DomainError> {
        let bad = |message: String| DomainError::DataFile {
            name: "metric_vocabulary".into(),
            message,
        };
        let file: VocabularyFile = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        let mut parameters = BTreeMap::new();
        for p in file.parameters {
            if parameters.insert(p.name.clone(), p.clone()).is_some() {
                return Err(bad(format!("duplicate parameter {}", p.name)));
            }
        }
        let mut attributes = BTreeMap::new();
        for a in file.attributes {
            if let Some(param) = &a.parameter {
                if !parameters.contains_key(param) {
                    return Err(bad(format!(
                        "attribute {} references unknown parameter {param}",
                        a.attribute
                    )));
                }
            }
            if attributes
                .insert(a.attribute.to_ascii_lowercase(), a.clone())
                .is_some()
            {
                return Err(bad(format!("duplicate attribute {}", a.attribute)));
            }
        }
        let unit_aliases = file
            .unit_aliases
            .into_iter()
            .map(|(k, v)| (k.to_ascii_lowercase(), v))
            .collect();
        Ok(Self {
            version: file.version,
            unit_aliases,
            duration_units: file.duration_units,
            parameters,
            attributes,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Maps unit spellings onto their canonical form (`milliseconds` -> `ms`).
    pub fn normalize_unit(&self, unit: &str) -> String {
        let trimmed = unit.trim();
        self.unit_aliases
            .get(&trimmed.to_ascii_lowercase())
            .cloned()
            .unwrap_or_else(|| trimmed.to_string())
    }

    pub fn is_duration_unit(&self, unit: &str) -> bool {
        self.duration_units.contains_key(&self.normalize_unit(unit))
    }

    /// Converts `value` from one unit to another. Identical units (after
    /// normalization) convert trivially; time units convert through seconds.
    pub fn convert(&self, value: f64, from: &str, to: &str) -> Option<f64> {
        let from = self.normalize_unit(from);
        let to = self.normalize_unit(to);
        if from == to {
            return Some(value);
        }
        let a = self.duration_units.get(&from)?;
        let b = self.duration_units.get(&to)?;
        Some(value * a / b)
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.get(name)
    }

    pub fn parameters(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.parameters.values()
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.get(&name.trim().to_ascii_lowercase())
    }

    pub fn attributes(&self) -> impl Iterator<Item = &AttributeSpec> {
        self.attributes.values()
    }

    /// Validates one metric row and returns whether it is canonical.
    pub(crate) fn check_row(&self, row: &MetricRow, pointer: &str) -> Result<bool, DomainError> {
        if row.attribute.trim().is_empty() {
            return Err(DomainError::schema(pointer, "attribute must be non-empty"));
        }
        let unit = self.normalize_unit(&row.unit);
        if let MetricValue::Number(v) = row.value {
            if !v.is_finite() {
                return Err(DomainError::value(&row.attribute, "value must be finite"));
            }
            if unit == "%" && !(0.0..=100.0).contains(&v) {
                return Err(DomainError::value(
                    &row.attribute,
                    format!("percentage {v} outside [0, 100]"),
                ));
            }
            if self.is_duration_unit(&unit) && v < 0.0 {
                return Err(DomainError::value(
                    &row.attribute,
                    format!("duration {v} is negative"),
                ));
            }
        }
        let Some(spec) = self.attribute(&row.attribute) else {
            return Ok(false);
        };
        if unit != self.normalize_unit(&spec.unit) {
            return Err(DomainError::value(
                &row.attribute,
                format!("unit `{}` does not match canonical `{}`", row.unit, spec.unit),
            ));
        }
        match (&row.value, spec.parameter.is_some() || spec.min.is_some()) {
            (MetricValue::Number(v), _) => {
                if spec.min.is_some_and(|m| *v < m) || spec.max.is_some_and(|m| *v > m) {
                    return Err(DomainError::value(
                        &row.attribute,
                        format!(
                            "{v} outside [{}, {}]",
                            spec.min.map_or("-inf".into(), |m| m.to_string()),
                            spec.max.map_or("inf".into(), |m| m.to_string())
                        ),
                    ));
                }
            }
            (MetricValue::Label(_), true) => {
                return Err(DomainError::value(&row.attribute, "expected a number"));
            }
            (MetricValue::Label(_), false) => {}
        }
        Ok(true)
    }
}
