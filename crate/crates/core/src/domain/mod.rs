//! Clinical data types shared by every other module: patient biostatistics,
//! metric tables, tracings, itemized findings and interpretations, arrhythmia
//! classes and the subgroup key used to match demonstrations.

mod arrhythmia;
mod bundle;
mod items;
mod vocabulary;

pub use arrhythmia::{canonicalize_arrhythmia_name, ArrhythmiaClass, ArrhythmiaTable};
pub use bundle::{
    content_hash, parse_bundle, parse_bundle_csv, parse_bundle_json, parse_metrics_csv,
    serialize_bundle, BundleFormat, BundleLoader, ImageResolution, BUNDLE_SCHEMA_VERSION,
};
pub use items::{FindingItem, InterpretationItem, Modality, ParamScalar, ParamValue};
pub use vocabulary::{AttributeSpec, MetricVocabulary, ParameterKind, ParameterSpec};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building or validating clinical data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    /// A required section or field is missing or has the wrong shape.
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    /// A value is present but outside its valid range.
    #[error("invalid value for {field}: {message}")]
    Value { field: String, message: String },
    #[error("tracing image `{0}` could not be resolved")]
    UnresolvedImage(String),
    #[error("unknown arrhythmia `{0}`")]
    UnknownArrhythmia(String),
    /// A shipped or user-supplied data file is malformed.
    #[error("invalid data file {name}: {message}")]
    DataFile { name: String, message: String },
}

impl DomainError {
    pub(crate) fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn value(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Value {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Male, Gender::Female, Gender::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Pediatric,
    Adult,
    Elderly,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 3] = [AgeGroup::Pediatric, AgeGroup::Adult, AgeGroup::Elderly];

    pub fn as_str(self) -> &'static str {
        match self {
            AgeGroup::Pediatric => "pediatric",
            AgeGroup::Adult => "adult",
            AgeGroup::Elderly => "elderly",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Age cut points for the three age groups. Overridable through pipeline
/// configuration; the defaults are pediatric < 18, adult 18-64, elderly >= 65.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeBands {
    pub adult_from: u32,
    pub elderly_from: u32,
}

impl Default for AgeBands {
    fn default() -> Self {
        Self {
            adult_from: 18,
            elderly_from: 65,
        }
    }
}

impl AgeBands {
    pub fn classify(&self, age_years: u32) -> AgeGroup {
        if age_years < self.adult_from {
            AgeGroup::Pediatric
        } else if age_years < self.elderly_from {
            AgeGroup::Adult
        } else {
            AgeGroup::Elderly
        }
    }
}

/// Background information about the patient. Only de-identified fields are
/// accepted; names or birth dates are rejected at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Biostatistics {
    pub patient_id: String,
    pub gender: Gender,
    pub age_years: u32,
    pub monitoring_hours: f64,
}

impl Biostatistics {
    pub fn age_group(&self, bands: &AgeBands) -> AgeGroup {
        bands.classify(self.age_years)
    }

    pub(crate) fn validate(&self) -> Result<(), DomainError> {
        if self.patient_id.trim().is_empty() {
            return Err(DomainError::value(
                "biostatistics.patient_id",
                "must be non-empty",
            ));
        }
        if self.age_years > 130 {
            return Err(DomainError::value(
                "biostatistics.age_years",
                format!("{} is not a plausible age", self.age_years),
            ));
        }
        if !(self.monitoring_hours.is_finite() && self.monitoring_hours > 0.0) {
            return Err(DomainError::value(
                "biostatistics.monitoring_hours",
                "must be a positive number",
            ));
        }
        Ok(())
    }
}

/// A metric value: numeric measurements or enumerated labels such as a rhythm name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Number(f64),
    Label(String),
}

impl MetricValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            MetricValue::Number(v) => Some(*v),
            MetricValue::Label(_) => None,
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Number(v) => f.write_str(&format_number(*v)),
            MetricValue::Label(s) => f.write_str(s),
        }
    }
}

/// Formats a number without a trailing `.0` for integral values.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub attribute: String,
    pub value: MetricValue,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Set when the attribute is not in the canonical vocabulary. The row is kept.
    #[serde(default, skip_serializing_if = "is_false")]
    pub non_canonical: bool,
}

impl MetricRow {
    pub fn new(attribute: impl Into<String>, value: MetricValue, unit: impl Into<String>) -> Self {
        Self {
            attribute: attribute.into(),
            value,
            unit: unit.into(),
            context: None,
            non_canonical: false,
        }
    }

    /// The line used for this row in prompts and reports, e.g. `AF Burden: 12%`.
    pub fn render(&self) -> String {
        let mut line = format!("{}: {}", self.attribute, self.value);
        if !self.unit.is_empty() {
            if self.unit == "%" {
                line.push('%');
            } else {
                line.push(' ');
                line.push_str(&self.unit);
            }
        }
        if let Some(ctx) = &self.context {
            line.push_str(&format!(" ({ctx})"));
        }
        line
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, attribute: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.attribute.eq_ignore_ascii_case(attribute))
    }

    pub fn non_canonical_attributes(&self) -> impl Iterator<Item = &str> {
        self.rows
            .iter()
            .filter(|r| r.non_canonical)
            .map(|r| r.attribute.as_str())
    }
}

/// An ECG strip, stored by reference plus content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracing {
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_hash: Option<String>,
    pub caption: String,
    pub duration_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrhythmia_tag: Option<String>,
}

impl Tracing {
    /// The content hash when known, otherwise the reference itself.
    pub fn content_id(&self) -> &str {
        self.image_hash.as_deref().unwrap_or(&self.image_ref)
    }
}

/// Grouping key used for demonstration matching and subgroup analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubgroupKey {
    pub gender: Gender,
    pub age_group: AgeGroup,
    pub arrhythmia_class: ArrhythmiaClass,
}

impl fmt::Display for SubgroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.gender, self.age_group, self.arrhythmia_class
        )
    }
}

/// Everything known about one patient study: (B, M, T) plus optional
/// cardiologist-adjudicated findings and interpretation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientBundle {
    pub schema_version: u32,
    pub biostatistics: Biostatistics,
    pub metrics: MetricsTable,
    #[serde(default)]
    pub tracings: Vec<Tracing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudicated_findings: Option<Vec<FindingItem>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudicated_interpretation: Option<Vec<InterpretationItem>>,
}

impl PatientBundle {
    pub fn patient_id(&self) -> &str {
        &self.biostatistics.patient_id
    }

    /// Arrhythmia tags carried by the tracings, in tracing order.
    pub fn arrhythmia_tags(&self) -> impl Iterator<Item = &str> {
        self.tracings
            .iter()
            .filter_map(|t| t.arrhythmia_tag.as_deref())
    }
}

/// Maximum-severity class over every tracing tag; Class I when untagged.
pub fn bundle_class(
    bundle: &PatientBundle,
    table: &ArrhythmiaTable,
) -> Result<ArrhythmiaClass, DomainError> {
    bundle
        .arrhythmia_tags()
        .try_fold(ArrhythmiaClass::I, |acc, tag| {
            table.classify(tag).map(|c| acc.max(c))
        })
}

pub fn subgroup_key(
    bundle: &PatientBundle,
    table: &ArrhythmiaTable,
    bands: &AgeBands,
) -> Result<SubgroupKey, DomainError> {
    Ok(SubgroupKey {
        gender: bundle.biostatistics.gender,
        age_group: bundle.biostatistics.age_group(bands),
        arrhythmia_class: bundle_class(bundle, table)?,
    })
}
