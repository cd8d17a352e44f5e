//! Generators and builders shared by the integration tests.
#![allow(dead_code)]

pub mod criteria;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use holter_core::agent::{Agent, AgentConfig, BackendHandle, Capabilities, GenerationParams, Role, ScriptTable};
use holter_core::domain::{
    Biostatistics, FindingItem, Gender, InterpretationItem, MetricRow, MetricValue, MetricVocabulary, MetricsTable, Modality,
    ParamScalar, ParamValue, PatientBundle, Tracing, BUNDLE_SCHEMA_VERSION,
};
use holter_core::factcheck::{GuidelineRule, GuidelineSet, Predicate, Severity, Violation, ViolationKind};
use holter_core::pipeline::{FixedClock, JobState, Pipeline, RunSettings, ENGINE_VERSION};
use holter_core::prompt::DemoLibrary;
use holter_core::report::{EditSection, EditTarget, ItemEdit, Report, ReportMeta, Review, ReviewStatus, REPORT_SCHEMA_VERSION};
use proptest::prelude::*;
use proptest::sample::select;

pub const FIXED_TIME: &str = "2026-03-01T08:00:00Z";

pub fn scripted(role: Role, entries: &[(&str, &str)]) -> Agent {
    Agent::from_config(AgentConfig {
        role,
        backend: BackendHandle::Scripted {
            table: ScriptTable::new(entries.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()),
            latency_ms: 0,
        },
        model_name: format!("scripted-{role}"),
        params: GenerationParams::default(),
        capabilities: Capabilities { vision: role == Role::T2F },
    })
    .unwrap()
}

/// Metrics-only pipeline with the shipped guidelines and a fixed clock.
pub fn pipeline(m2f: &str, f2i: &[(&str, &str)], retries: u32) -> Pipeline {
    Pipeline::new(
        vec![scripted(Role::M2F, &[("default", m2f)]), scripted(Role::F2I, f2i)],
        GuidelineSet::builtin(),
        DemoLibrary::default(),
        RunSettings {
            max_factcheck_retries: retries,
            ..RunSettings::default()
        },
    )
    .unwrap()
    .with_clock(Arc::new(FixedClock(DateTime::parse_from_rfc3339(FIXED_TIME).unwrap().with_timezone(&Utc))))
}

pub fn metrics_bundle(rows: Vec<MetricRow>) -> PatientBundle {
    PatientBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        biostatistics: Biostatistics {
            patient_id: "P-1".into(),
            gender: Gender::Male,
            age_years: 70,
            monitoring_hours: 24.0,
        },
        metrics: MetricsTable { rows },
        tracings: vec![],
        adjudicated_findings: None,
        adjudicated_interpretation: None,
    }
}

pub fn finding(id: &str, statement: &str, params: &[(&str, ParamValue)]) -> FindingItem {
    FindingItem {
        id: id.into(),
        statement: statement.into(),
        source_modality: Modality::Metrics,
        parameters: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        agent_iteration: 0,
    }
}

pub fn interpretation(id: &str, statement: &str, tags: &[&str], supports: &[&str]) -> InterpretationItem {
    InterpretationItem {
        id: id.into(),
        statement: statement.into(),
        diagnosis_tags: tags.iter().map(|t| t.to_string()).collect(),
        supports: supports.iter().map(|t| t.to_string()).collect(),
        agent_iteration: 0,
    }
}

// ---------------------------------------------------------------------------
// Generators

const WORDS: &[&str] = &[
    "sinus", "rhythm", "rate", "episodes", "noted", "during", "sleep", "brief", "isolated", "ectopy", "occasional", "runs",
    "nocturnal", "baseline", "stable", "irregular", "conduction", "morphology", "symptoms", "diary", "correlate", "with",
    "the", "was", "of", "strip", "tracing", "beats", "minimal", "mild", "frequent", "rare", "couplets", "triplets",
];

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => select(WORDS).prop_map(str::to_string),
        1 => (0u32..400).prop_map(|n| n.to_string()),
        1 => (0u32..4000).prop_map(|n| format!("{}.{}", n / 10, n % 10)),
        1 => select(&["ms", "bpm", "%", "s"][..]).prop_map(str::to_string),
    ]
}

/// A free-text clinical statement on one line, capitalized, never a header
/// or placeholder, never ending in a citation list.
pub fn statement() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 2..12).prop_map(|ws| {
        let mut s = ws.join(" ");
        if let Some(first) = s.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        s
    })
}

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    prop_oneof![
        (lo..=hi),
        ((lo as i64)..=(hi as i64)).prop_map(|v| v as f64),
    ]
}

fn param_value(vocab: &MetricVocabulary, name: &str) -> BoxedStrategy<ParamValue> {
    let spec = vocab.parameter(name).unwrap();
    match &spec.unit {
        Some(u) => {
            let u = u.clone();
            finite(0.0, 100.0).prop_map(move |v| ParamValue::number(v, u.clone())).boxed()
        }
        None => any::<bool>().prop_map(ParamValue::flag).boxed(),
    }
}

fn parameter_names() -> Vec<String> {
    MetricVocabulary::builtin().parameters().map(|p| p.name.clone()).collect()
}

fn param_map() -> impl Strategy<Value = BTreeMap<String, ParamValue>> {
    let names = parameter_names();
    prop::collection::btree_set(select(names), 0..4).prop_flat_map(|set| {
        let vocab = MetricVocabulary::builtin();
        let entries: Vec<_> = set
            .into_iter()
            .map(|n| (Just(n.clone()), param_value(&vocab, &n)))
            .collect();
        entries.prop_map(|v| v.into_iter().collect::<BTreeMap<_, _>>())
    })
}

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![Just(Modality::Metrics), Just(Modality::Tracing)]
}

pub fn findings(max: usize) -> impl Strategy<Value = Vec<FindingItem>> {
    prop::collection::vec((statement(), modality(), param_map(), 0u32..3), 1..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (statement, source_modality, parameters, agent_iteration))| FindingItem {
                id: format!("F{}", i + 1),
                statement,
                source_modality,
                parameters,
                agent_iteration,
            })
            .collect()
    })
}

const TAGS: &[&str] = &["ATRIAL_FIBRILLATION", "FIRST_DEGREE_AV_BLOCK", "SINUS_RHYTHM", "PROLONGED_PAUSE", "VENTRICULAR_TACHYCARDIA"];

pub fn interpretations(n_findings: usize, max: usize) -> impl Strategy<Value = Vec<InterpretationItem>> {
    let ids: Vec<String> = (1..=n_findings).map(|i| format!("F{i}")).collect();
    prop::collection::vec(
        (
            statement(),
            prop::collection::btree_set(select(TAGS).prop_map(str::to_string), 0..3),
            prop::sample::subsequence(ids, 0..=n_findings.min(3)),
            0u32..3,
        ),
        1..max,
    )
    .prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (statement, diagnosis_tags, supports, agent_iteration))| InterpretationItem {
                id: format!("I{}", i + 1),
                statement,
                diagnosis_tags,
                supports,
                agent_iteration,
            })
            .collect()
    })
}

fn gender() -> impl Strategy<Value = Gender> {
    prop_oneof![Just(Gender::Male), Just(Gender::Female), Just(Gender::Other)]
}

fn biostatistics() -> impl Strategy<Value = Biostatistics> {
    ("[A-Z]-[0-9]{3,6}", gender(), 0u32..=110, finite(1.0, 336.0)).prop_map(|(patient_id, gender, age_years, monitoring_hours)| {
        Biostatistics {
            patient_id,
            gender,
            age_years,
            monitoring_hours,
        }
    })
}

/// A metric row that validates: a canonical attribute with its own unit and
/// an in-range value, or a non-canonical one flagged as such.
fn metric_row() -> impl Strategy<Value = MetricRow> {
    let vocab = MetricVocabulary::builtin();
    let canonical: Vec<(String, String, f64, f64, bool)> = vocab
        .attributes()
        .map(|a| {
            (
                a.attribute.clone(),
                a.unit.clone(),
                a.min.unwrap_or(0.0),
                a.max.unwrap_or(1e6),
                a.parameter.is_some() || a.min.is_some(),
            )
        })
        .collect();
    prop_oneof![
        3 => (select(canonical), 0.0f64..=1.0).prop_map(|((attr, unit, lo, hi, numeric), t)| {
            let value = if numeric {
                MetricValue::Number(lo + (hi - lo) * t)
            } else {
                MetricValue::Label("Sinus Rhythm".into())
            };
            MetricRow::new(attr, value, unit)
        }),
        1 => ("Custom [A-Z][a-z]{3,8}", prop_oneof![
                finite(0.0, 50.0).prop_map(MetricValue::Number),
                "[a-z]{3,10}".prop_map(MetricValue::Label),
            ], prop::option::of("[a-z ]{3,12}")).prop_map(|(attr, value, context)| {
            let mut row = MetricRow::new(attr, value, "count");
            row.context = context;
            row.non_canonical = true;
            row
        }),
    ]
}

fn tracing() -> impl Strategy<Value = Tracing> {
    (
        "[0-9a-f]{64}",
        statement(),
        finite(1.0, 60.0),
        prop::option::of(select(&["AF", "VT", "Sinus Bradycardia", "Pause (<3s)"][..])),
    )
        .prop_map(|(hex, caption, duration_seconds, tag)| Tracing {
            image_ref: format!("sha256:{hex}"),
            image_hash: Some(format!("sha256:{hex}")),
            caption,
            duration_seconds,
            arrhythmia_tag: tag.map(str::to_string),
        })
}

pub fn bundle() -> impl Strategy<Value = PatientBundle> {
    (
        biostatistics(),
        prop::collection::vec(metric_row(), 0..8),
        prop::collection::vec(tracing(), 0..3),
        prop::option::of(findings(6)),
    )
        .prop_flat_map(|(bio, rows, tracings, adj)| {
            let interp = match &adj {
                Some(f) => prop::option::of(interpretations(f.len(), 4)).boxed(),
                None => Just(None).boxed(),
            };
            (Just(bio), Just(rows), Just(tracings), Just(adj), interp)
        })
        .prop_map(|(biostatistics, mut rows, tracings, adjudicated_findings, adjudicated_interpretation)| {
            let mut seen = BTreeSet::new();
            rows.retain(|r| seen.insert(r.attribute.to_ascii_lowercase()));
            PatientBundle {
                schema_version: BUNDLE_SCHEMA_VERSION,
                biostatistics,
                metrics: MetricsTable { rows },
                tracings,
                adjudicated_findings,
                adjudicated_interpretation,
            }
        })
}

fn job_state() -> impl Strategy<Value = JobState> {
    prop_oneof![
        Just(JobState::Complete),
        Just(JobState::NeedsManualReview),
        (1u32..5).prop_map(|iteration| JobState::Regenerating { iteration }),
        "[a-z ]{1,20}".prop_map(|reason| JobState::Failed { reason }),
    ]
}

fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::M2F), Just(Role::T2F), Just(Role::F2I)]
}

fn violation() -> impl Strategy<Value = Violation> {
    (
        prop::option::of("[A-Z_]{3,12}"),
        prop_oneof![
            Just(ViolationKind::MissingInterpretation),
            Just(ViolationKind::ContradictedInterpretation),
            Just(ViolationKind::UnsupportedInterpretation),
        ],
        select(TAGS),
        prop_oneof![Just(Severity::Advisory), Just(Severity::Mandatory)],
        prop::collection::vec("F[1-9]", 0..3),
        prop::collection::vec("I[1-9]", 0..3),
        statement(),
        role(),
    )
        .prop_map(|(rule_id, kind, tag, severity, finding_refs, interpretation_refs, text, target_agent)| Violation {
            rule_id,
            kind,
            tag: tag.to_string(),
            severity,
            finding_refs,
            interpretation_refs,
            regeneration_instruction: text,
            target_agent,
        })
}

fn review() -> impl Strategy<Value = Review> {
    let edit = (
        prop_oneof![Just(EditSection::Finding), Just(EditSection::Interpretation)],
        "[FI][1-9]",
        statement(),
        statement(),
        "[a-z]{2,8}",
    )
        .prop_map(|(section, item_id, old_text, new_text, editor_id)| ItemEdit {
            target: EditTarget { section, item_id },
            old_text,
            new_text,
            editor_id,
            timestamp: "2026-03-02T10:00:00.000Z".into(),
        });
    (
        prop_oneof![Just(ReviewStatus::Preliminary), Just(ReviewStatus::Reviewed), Just(ReviewStatus::Signed)],
        prop::collection::vec(edit, 0..3),
        prop::option::of("[a-z]{2,8}"),
    )
        .prop_map(|(status, edits, reviewer_id)| Review {
            status,
            reviewed_at: reviewer_id.as_ref().map(|_| "2026-03-02T11:00:00.000Z".to_string()),
            edits,
            reviewer_id,
        })
}

pub fn report() -> impl Strategy<Value = Report> {
    (bundle(), findings(8))
        .prop_flat_map(|(b, f)| {
            let n = f.len();
            (
                Just(b),
                Just(f),
                interpretations(n, 5),
                prop::collection::vec(violation(), 0..3),
                job_state(),
                any::<bool>(),
                0u32..4,
                review(),
                "[0-9a-f]{64}",
            )
        })
        .prop_map(|(b, findings, interpretation, violations, state, degraded, iterations, review, gv)| Report {
            schema_version: REPORT_SCHEMA_VERSION,
            patient: b.biostatistics,
            metrics: b.metrics,
            tracings: b.tracings,
            findings,
            interpretation,
            violations,
            meta: ReportMeta {
                engine_version: ENGINE_VERSION.into(),
                model_names: Role::ALL.iter().map(|r| (*r, format!("model-{r}"))).collect(),
                guideline_set_version: gv,
                demo_ids: [(Role::M2F, vec!["D-1:M2F".to_string()])].into_iter().collect(),
                factcheck_iterations: iterations,
                state,
                degraded,
                created_at: "2026-03-01T08:00:00.000Z".into(),
            },
            review,
        })
}

/// Rules over random parameters, each with a predicate of the right kind in
/// the parameter's canonical unit.
pub fn guideline_rules() -> impl Strategy<Value = Vec<GuidelineRule>> {
    let vocab = MetricVocabulary::builtin();
    let params: Vec<(String, Option<String>)> = vocab.parameters().map(|p| (p.name.clone(), p.unit.clone())).collect();
    let rule = (select(params), 0usize..6, finite(0.0, 500.0), finite(0.0, 500.0), any::<bool>(), select(TAGS), statement(), any::<bool>())
        .prop_map(|((name, unit), op, a, b, flag, tag, text, mandatory)| {
            let predicate = match unit {
                None => Predicate::Equals {
                    value: ParamScalar::Bool(flag),
                    unit: None,
                },
                Some(u) => match op {
                    0 => Predicate::Gt { threshold: a, unit: u },
                    1 => Predicate::Ge { threshold: a, unit: u },
                    2 => Predicate::Lt { threshold: a, unit: u },
                    3 => Predicate::Le { threshold: a, unit: u },
                    4 => Predicate::InRange {
                        low: a.min(b),
                        high: a.max(b),
                        unit: u,
                    },
                    _ => Predicate::Equals {
                        value: ParamScalar::Number(a),
                        unit: Some(u),
                    },
                },
            };
            GuidelineRule {
                id: String::new(),
                parameter: name,
                predicate,
                required_tag: tag.to_string(),
                guideline_text: text,
                severity: if mandatory { Severity::Mandatory } else { Severity::Advisory },
            }
        });
    prop::collection::vec(rule, 1..10).prop_map(|mut rules| {
        for (i, r) in rules.iter_mut().enumerate() {
            r.id = format!("RULE_{i:02}");
        }
        rules
    })
}
