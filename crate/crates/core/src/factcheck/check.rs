use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GuidelineRule, GuidelineSet, Severity};
use crate::agent::Role;
use crate::domain::{FindingItem, InterpretationItem, MetricVocabulary, Modality};
use crate::prompt::TagLexicon;
use crate::prompt::ItemParser;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// A rule fires on the findings but its diagnosis is absent.
    MissingInterpretation,
    /// A diagnosis is asserted although the findings falsify its rule.
    ContradictedInterpretation,
    /// A diagnosis no rule covers and no finding is cited for.
    UnsupportedInterpretation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `None` for unsupported diagnoses, which no rule covers.
    pub rule_id: Option<String>,
    pub kind: ViolationKind,
    pub tag: String,
    pub severity: Severity,
    pub finding_refs: Vec<String>,
    pub interpretation_refs: Vec<String>,
    pub regeneration_instruction: String,
    pub target_agent: Role,
}

impl Violation {
    /// Whether this violation keeps a report from completing.
    pub fn is_blocking(&self) -> bool {
        self.severity == Severity::Mandatory
    }
}

/// Orders ids like `F2` before `F10`.
fn id_key(id: &str) -> (String, u64) {
    let split = id.find(|c: char| c.is_ascii_digit()).unwrap_or(id.len());
    (id[..split].to_string(), id[split..].parse().unwrap_or(u64::MAX))
}

fn sort_ids(ids: &mut Vec<String>) {
    ids.sort_by_key(|a| id_key(a));
    ids.dedup();
}

fn role_for(modality: Modality) -> Role {
    match modality {
        Modality::Metrics => Role::M2F,
        Modality::Tracing => Role::T2F,
    }
}

/// Evaluates guideline rules with unit normalization and tag phrasing.
#[derive(Debug, Clone)]
pub struct FactChecker {
    guidelines: GuidelineSet,
    vocabulary: MetricVocabulary,
    lexicon: TagLexicon,
}

impl FactChecker {
    pub fn new(guidelines: GuidelineSet, vocabulary: MetricVocabulary, lexicon: TagLexicon) -> Self {
        Self {
            guidelines,
            vocabulary,
            lexicon,
        }
    }

    pub fn with_parser(guidelines: GuidelineSet, parser: &ItemParser) -> Self {
        Self::new(guidelines, parser.vocabulary().clone(), parser.lexicon().clone())
    }

    pub fn guidelines(&self) -> &GuidelineSet {
        &self.guidelines
    }

    fn evaluate<'f>(&self, rule: &GuidelineRule, findings: &'f [FindingItem], expect: bool) -> Vec<&'f FindingItem> {
        findings
            .iter()
            .filter(|f| {
                f.parameters
                    .get(&rule.parameter)
                    .and_then(|v| rule.predicate.evaluate(v, &self.vocabulary))
                    == Some(expect)
            })
            .collect()
    }

    /// All violations, sorted by rule id and then finding refs. Pure: the
    /// result does not depend on item order.
    pub fn check(&self, findings: &[FindingItem], interpretation: &[InterpretationItem]) -> Vec<Violation> {
        let asserted: BTreeSet<&str> = interpretation
            .iter()
            .flat_map(|i| i.diagnosis_tags.iter().map(String::as_str))
            .collect();
        let carrying = |tag: &str| -> Vec<&InterpretationItem> {
            interpretation.iter().filter(|i| i.diagnosis_tags.contains(tag)).collect()
        };
        let mut out = Vec::new();

        for rule in self.guidelines.rules() {
            let firing = self.evaluate(rule, findings, true);
            if !firing.is_empty() && !asserted.contains(rule.required_tag.as_str()) {
                out.push(self.violation(
                    Some(rule),
                    ViolationKind::MissingInterpretation,
                    &rule.required_tag,
                    &firing,
                    &[],
                    Role::F2I,
                    findings,
                    interpretation,
                ));
            }
        }

        for tag in &asserted {
            let rules: Vec<&GuidelineRule> = self
                .guidelines
                .rules()
                .iter()
                .filter(|r| r.required_tag == *tag)
                .collect();
            let items = carrying(tag);
            if rules.iter().any(|r| !self.evaluate(r, findings, true).is_empty()) {
                continue;
            }
            let mut falsified_any = false;
            for rule in &rules {
                let falsifying = self.evaluate(rule, findings, false);
                if falsifying.is_empty() {
                    continue;
                }
                falsified_any = true;
                let target = role_for(falsifying[0].source_modality);
                out.push(self.violation(
                    Some(rule),
                    ViolationKind::ContradictedInterpretation,
                    tag,
                    &falsifying,
                    &items,
                    target,
                    findings,
                    interpretation,
                ));
            }
            let parameter_seen = rules.iter().any(|r| {
                findings.iter().any(|f| f.parameters.contains_key(&r.parameter))
            });
            if falsified_any || parameter_seen {
                continue;
            }
            let uncited: Vec<&InterpretationItem> =
                items.into_iter().filter(|i| i.supports.is_empty()).collect();
            if !uncited.is_empty() {
                out.push(self.violation(
                    None,
                    ViolationKind::UnsupportedInterpretation,
                    tag,
                    &[],
                    &uncited,
                    Role::F2I,
                    findings,
                    interpretation,
                ));
            }
        }

        out.sort_by(|a, b| {
            (&a.rule_id, a.finding_refs.iter().map(|s| id_key(s)).collect::<Vec<_>>(), &a.tag, a.kind)
                .cmp(&(&b.rule_id, b.finding_refs.iter().map(|s| id_key(s)).collect::<Vec<_>>(), &b.tag, b.kind))
        });
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn violation(
        &self,
        rule: Option<&GuidelineRule>,
        kind: ViolationKind,
        tag: &str,
        finding_refs: &[&FindingItem],
        interpretation_refs: &[&InterpretationItem],
        target_agent: Role,
        findings: &[FindingItem],
        interpretation: &[InterpretationItem],
    ) -> Violation {
        let mut f: Vec<String> = finding_refs.iter().map(|x| x.id.clone()).collect();
        let mut i: Vec<String> = interpretation_refs.iter().map(|x| x.id.clone()).collect();
        sort_ids(&mut f);
        sort_ids(&mut i);
        let mut v = Violation {
            rule_id: rule.map(|r| r.id.clone()),
            kind,
            tag: tag.to_string(),
            severity: rule.map_or(Severity::Advisory, |r| r.severity),
            finding_refs: f,
            interpretation_refs: i,
            regeneration_instruction: String::new(),
            target_agent,
        };
        v.regeneration_instruction =
            regeneration_instruction(&v, &self.guidelines, &self.lexicon, findings, interpretation);
        v
    }
}

fn quote_items<'a>(ids: &[String], lookup: impl Fn(&str) -> Option<&'a str>) -> String {
    ids.iter()
        .filter_map(|id| lookup(id).map(|s| format!("\n- [{id}] {s}")))
        .collect()
}

/// The correction request sent to `violation.target_agent`. It quotes the
/// guideline text verbatim together with the offending items.
pub fn regeneration_instruction(
    violation: &Violation,
    guidelines: &GuidelineSet,
    lexicon: &TagLexicon,
    findings: &[FindingItem],
    interpretation: &[InterpretationItem],
) -> String {
    let phrase = lexicon.phrase_for(&violation.tag).unwrap_or(&violation.tag);
    let finding = |id: &str| findings.iter().find(|f| f.id == id).map(|f| f.statement.as_str());
    let item = |id: &str| interpretation.iter().find(|i| i.id == id).map(|i| i.statement.as_str());
    let guideline = violation
        .rule_id
        .as_deref()
        .and_then(|id| guidelines.rule(id))
        .map(|r| format!("\nGuideline [{}]: {}", r.id, r.guideline_text))
        .unwrap_or_default();
    let f_refs = violation.finding_refs.join(", ");
    match violation.kind {
        ViolationKind::MissingInterpretation => format!(
            "Fact-check: the interpretation does not include a required diagnosis ({phrase}).{guideline}\nRelevant findings:{}\nRequired correction: add an interpretation item stating {phrase}, citing [{f_refs}].",
            quote_items(&violation.finding_refs, finding),
        ),
        ViolationKind::ContradictedInterpretation => format!(
            "Fact-check: the interpretation asserts {phrase}, but the findings do not meet the guideline criterion.{guideline}\nRelevant findings:{}\nInterpretation items:{}\nRequired correction: re-examine the patient data. Correct the finding if it was mis-stated; otherwise remove {phrase} from the interpretation.",
            quote_items(&violation.finding_refs, finding),
            quote_items(&violation.interpretation_refs, item),
        ),
        ViolationKind::UnsupportedInterpretation => format!(
            "Fact-check (advisory): these interpretation items assert {phrase} without any supporting finding:{}\nRequired correction: cite the supporting finding ids in square brackets, or remove the statement if no finding supports it.",
            quote_items(&violation.interpretation_refs, item),
        ),
    }
}

/// Checks with the built-in vocabulary and tag lexicon.
pub fn check(
    findings: &[FindingItem],
    interpretation: &[InterpretationItem],
    guidelines: &GuidelineSet,
) -> Vec<Violation> {
    FactChecker::with_parser(guidelines.clone(), &ItemParser::builtin()).check(findings, interpretation)
}
