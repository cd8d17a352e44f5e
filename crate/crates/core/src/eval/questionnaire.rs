use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::report::Report;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireSection {
    pub alias: String,
    pub findings: String,
    pub interpretation: String,
}

/// A blinded questionnaire for one patient: the patient data, then one
/// section per model under a content-free alias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub patient_id: String,
    pub seed: u64,
    pub patient_data: String,
    pub sections: Vec<QuestionnaireSection>,
}

impl Questionnaire {
    /// Everything a rater sees, as one string.
    pub fn body(&self) -> String {
        let mut out = self.patient_data.clone();
        for s in &self.sections {
            out.push_str(&format!("\n\n{}\nFindings:\n{}\nInterpretation:\n{}", s.alias, s.findings, s.interpretation));
        }
        out
    }
}

/// The alias-to-model mapping, kept apart from the questionnaire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedAliasMap {
    pub patient_id: String,
    pub seed: u64,
    pub aliases: BTreeMap<String, String>,
}

impl SealedAliasMap {
    pub fn model_for(&self, alias: &str) -> Option<&str> {
        self.aliases.get(alias).map(String::as_str)
    }
}

fn alias(i: usize) -> String {
    let mut label = String::new();
    let mut n = i;
    loop {
        label.insert(0, (b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    format!("Model {label}")
}

fn patient_text(r: &Report) -> String {
    let p = &r.patient;
    let mut out = format!(
        "Patient {}: {}, {} years, {} hours of monitoring\nMetrics:",
        p.patient_id,
        p.gender,
        p.age_years,
        crate::domain::format_number(p.monitoring_hours)
    );
    for row in &r.metrics.rows {
        out.push_str("\n- ");
        out.push_str(&row.render());
    }
    out.push_str("\nTracings:");
    for (i, t) in r.tracings.iter().enumerate() {
        out.push_str(&format!("\n- Tracing {}: {}", i + 1, t.caption));
    }
    out
}

/// Builds a blinded questionnaire from one report per model. Aliases are
/// assigned by a permutation seeded from (`seed`, patient id); any model name
/// occurring in report text is redacted.
pub fn build_questionnaire(
    reports: &BTreeMap<String, Report>,
    seed: u64,
) -> Result<(Questionnaire, SealedAliasMap), EvalError> {
    let first = reports.values().next().ok_or(EvalError::NoReports)?;
    let patient_id = first.patient_id().to_string();
    if let Some(other) = reports.values().find(|r| r.patient_id() != patient_id) {
        return Err(EvalError::PatientMismatch {
            expected: patient_id,
            found: other.patient_id().to_string(),
        });
    }
    let mut digest = Sha256::new();
    digest.update(seed.to_le_bytes());
    digest.update(patient_id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(digest.finalize().into());
    let mut models: Vec<&String> = reports.keys().collect();
    models.shuffle(&mut rng);

    let mut names: Vec<&str> = reports.keys().map(String::as_str).filter(|n| !n.trim().is_empty()).collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    let redactor = (!names.is_empty()).then(|| {
        let alt = names.iter().map(|n| regex::escape(n)).collect::<Vec<_>>().join("|");
        Regex::new(&format!("(?i){alt}")).expect("escaped names form a valid pattern")
    });
    let redact = |s: String| match &redactor {
        Some(re) => re.replace_all(&s, "[redacted]").into_owned(),
        None => s,
    };

    let mut aliases = BTreeMap::new();
    let mut sections = Vec::new();
    for (i, model) in models.into_iter().enumerate() {
        let r = &reports[model];
        let a = alias(i);
        aliases.insert(a.clone(), model.clone());
        let findings = r.findings.iter().map(|f| format!("- {}", f.statement)).collect::<Vec<_>>().join("\n");
        let interpretation = r.interpretation.iter().map(|x| format!("- {}", x.statement)).collect::<Vec<_>>().join("\n");
        sections.push(QuestionnaireSection {
            alias: a,
            findings: redact(findings),
            interpretation: redact(interpretation),
        });
    }
    Ok((
        Questionnaire {
            patient_id: patient_id.clone(),
            seed,
            patient_data: redact(patient_text(first)),
            sections,
        },
        SealedAliasMap {
            patient_id,
            seed,
            aliases,
        },
    ))
}
