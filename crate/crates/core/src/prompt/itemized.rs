//! Parsing of itemized agent responses into findings and interpretations.
//!
//! Items are lines starting with a list marker (`-`, `*`, `•`, `1.` or
//! `1)`). Parameters are pulled out of finding statements with the
//! declarative pattern table; diagnosis tags come from the tag lexicon with a
//! small clause-level negation check. Interpretation items may end with
//! `[F1, F3]` naming the findings that support them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::PromptError;
use crate::domain::{
    FindingItem, InterpretationItem, MetricVocabulary, Modality, ParamScalar, ParamValue,
    ParameterKind,
};

#[derive(Debug, Deserialize)]
struct PatternFile {
    #[allow(dead_code)]
    version: u32,
    patterns: Vec<PatternSpec>,
}

#[derive(Debug, Deserialize)]
struct PatternSpec {
    parameter: String,
    regex: String,
    #[serde(default)]
    value: Option<bool>,
}

#[derive(Debug, Clone)]
struct CompiledPattern {
    parameter: String,
    regex: Regex,
    fixed: Option<bool>,
    unit: Option<String>,
}

/// Ordered parameter-extraction patterns. For each parameter the first
/// matching pattern wins.
#[derive(Debug, Clone)]
pub struct PatternTable {
    patterns: Vec<CompiledPattern>,
}

const BUILTIN_PATTERNS: &str = include_str!("../../data/parameter_patterns.json");
const BUILTIN_LEXICON: &str = include_str!("../../data/tag_lexicon.json");

impl PatternTable {
    pub fn from_json(raw: &str, vocab: &MetricVocabulary) -> Result<Self, PromptError> {
        let file: PatternFile = serde_json::from_str(raw)
            .map_err(|e| PromptError::Data(format!("parameter patterns: {e}")))?;
        let mut patterns = Vec::with_capacity(file.patterns.len());
        for spec in file.patterns {
            let param = vocab.parameter(&spec.parameter).ok_or_else(|| {
                PromptError::Data(format!("pattern for unknown parameter {}", spec.parameter))
            })?;
            let regex = Regex::new(&spec.regex)
                .map_err(|e| PromptError::Data(format!("pattern for {}: {e}", spec.parameter)))?;
            match (param.kind, spec.value) {
                (ParameterKind::Bool, None) => {
                    return Err(PromptError::Data(format!(
                        "boolean parameter {} needs a fixed value",
                        spec.parameter
                    )))
                }
                (ParameterKind::Number, Some(_)) => {
                    return Err(PromptError::Data(format!(
                        "numeric parameter {} cannot take a fixed boolean",
                        spec.parameter
                    )))
                }
                (ParameterKind::Number, None) if regex.capture_names().all(|n| n != Some("value")) => {
                    return Err(PromptError::Data(format!(
                        "numeric pattern for {} lacks a `value` group",
                        spec.parameter
                    )))
                }
                _ => {}
            }
            patterns.push(CompiledPattern {
                parameter: spec.parameter,
                regex,
                fixed: spec.value,
                unit: param.unit.clone(),
            });
        }
        Ok(Self { patterns })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    fn extract(&self, statement: &str, vocab: &MetricVocabulary) -> BTreeMap<String, ParamValue> {
        let mut out = BTreeMap::new();
        for p in &self.patterns {
            if out.contains_key(&p.parameter) {
                continue;
            }
            let Some(caps) = p.regex.captures(statement) else {
                continue;
            };
            let value = match p.fixed {
                Some(b) => ParamValue::flag(b),
                None => {
                    let Some(raw) = caps.name("value").and_then(|m| m.as_str().parse::<f64>().ok())
                    else {
                        continue;
                    };
                    let canonical = p.unit.clone().unwrap_or_default();
                    let number = match caps.name("unit") {
                        Some(u) => match vocab.convert(raw, u.as_str(), &canonical) {
                            Some(v) => v,
                            None => continue,
                        },
                        None => raw,
                    };
                    ParamValue {
                        value: ParamScalar::Number(number),
                        unit: p.unit.clone(),
                    }
                }
            };
            out.insert(p.parameter.clone(), value);
        }
        out
    }
}

#[derive(Debug, Deserialize)]
struct LexiconFile {
    #[allow(dead_code)]
    version: u32,
    negation_cues: Vec<String>,
    post_negation_cues: Vec<String>,
    entries: Vec<LexiconEntry>,
}

#[derive(Debug, Deserialize)]
struct LexiconEntry {
    tag: String,
    phrases: Vec<String>,
}

/// Phrase-to-tag lexicon for diagnosis statements.
#[derive(Debug, Clone)]
pub struct TagLexicon {
    entries: Vec<(String, Vec<String>, Regex)>,
    negation: Regex,
    post_negation: Regex,
}

fn alternation(phrases: &[String]) -> String {
    let mut sorted: Vec<&String> = phrases.iter().collect();
    // Longest first so "PVCs" is preferred over "PVC".
    sorted.sort_by_key(|p| std::cmp::Reverse(p.len()));
    sorted
        .iter()
        .map(|p| regex::escape(p))
        .collect::<Vec<_>>()
        .join("|")
}

impl TagLexicon {
    pub fn from_json(raw: &str) -> Result<Self, PromptError> {
        let file: LexiconFile = serde_json::from_str(raw)
            .map_err(|e| PromptError::Data(format!("tag lexicon: {e}")))?;
        let compile = |pattern: String| {
            Regex::new(&pattern).map_err(|e| PromptError::Data(format!("tag lexicon: {e}")))
        };
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for e in file.entries {
            if e.phrases.is_empty() || !seen.insert(e.tag.clone()) {
                return Err(PromptError::Data(format!("tag lexicon entry {} is empty or duplicated", e.tag)));
            }
            let re = compile(format!(r"(?i)\b(?:{})\b", alternation(&e.phrases)))?;
            entries.push((e.tag, e.phrases, re));
        }
        Ok(Self {
            entries,
            negation: compile(format!(r"(?i)\b(?:{})\b", alternation(&file.negation_cues)))?,
            post_negation: compile(format!(r"(?i)\b(?:{})\b", alternation(&file.post_negation_cues)))?,
        })
    }

    /// Canonical phrase for a tag, used when asking an agent to add it.
    pub fn phrase_for(&self, tag: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(t, _, _)| t == tag)
            .and_then(|(_, phrases, _)| phrases.first().map(String::as_str))
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(t, _, _)| t.as_str())
    }

    /// Tags asserted (not negated) by a statement.
    pub fn extract(&self, statement: &str) -> BTreeSet<String> {
        let mut tags = BTreeSet::new();
        for (tag, _, re) in &self.entries {
            if re.find_iter(statement).any(|m| !self.negated(statement, m.start(), m.end())) {
                tags.insert(tag.clone());
            }
        }
        tags
    }

    fn negated(&self, text: &str, start: usize, end: usize) -> bool {
        let before = &text[..start];
        let clause_start = before
            .rfind(['.', ';', ',', ':', '\n'])
            .map_or(0, |i| i + 1);
        if self.negation.is_match(&before[clause_start..]) {
            return true;
        }
        let after = &text[end..];
        let clause_end = after.find(['.', ';', ',', '\n']).unwrap_or(after.len());
        self.post_negation.is_match(&after[..clause_end])
    }
}

/// The output of parsing one response: recognized items plus any lines that
/// carried no item marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub remainder: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    Findings(Modality),
    Interpretation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedItems {
    Findings(Parsed<FindingItem>),
    Interpretation(Parsed<InterpretationItem>),
}

impl ParsedItems {
    /// Parsed findings; empty for an interpretation.
    pub fn findings(&self) -> &[FindingItem] {
        match self {
            ParsedItems::Findings(p) => &p.items,
            ParsedItems::Interpretation(_) => &[],
        }
    }

    /// Parsed interpretation items; empty for findings.
    pub fn interpretation(&self) -> &[InterpretationItem] {
        match self {
            ParsedItems::Interpretation(p) => &p.items,
            ParsedItems::Findings(_) => &[],
        }
    }
}

/// Splits responses into items and extracts parameters and tags.
#[derive(Debug, Clone)]
pub struct ItemParser {
    vocabulary: MetricVocabulary,
    patterns: PatternTable,
    lexicon: TagLexicon,
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:[-*•]|\d{1,3}[.)])\s+(.*)$").unwrap())
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^#*\s*(?:clinical\s+|diagnostic\s+)?(?:findings|interpretation|impression)\s*:?\s*$")
            .unwrap()
    })
}

fn supports_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\s*\[\s*(F\d+(?:\s*,\s*F\d+)*)\s*\]\s*\.?\s*$").unwrap()
    })
}

fn is_placeholder(s: &str) -> bool {
    s.starts_with('<') && s.ends_with('>')
}

impl ItemParser {
    pub fn new(vocabulary: MetricVocabulary, patterns: PatternTable, lexicon: TagLexicon) -> Self {
        Self {
            vocabulary,
            patterns,
            lexicon,
        }
    }

    /// The parser over the shipped data files. Built once per process;
    /// clones share the compiled patterns.
    pub fn builtin() -> Self {
        static BUILTIN: OnceLock<ItemParser> = OnceLock::new();
        BUILTIN
            .get_or_init(|| {
                let vocabulary = MetricVocabulary::builtin();
                let patterns = PatternTable::from_json(BUILTIN_PATTERNS, &vocabulary)
                    .expect("shipped pattern table is valid");
                let lexicon = TagLexicon::from_json(BUILTIN_LEXICON).expect("shipped lexicon is valid");
                Self::new(vocabulary, patterns, lexicon)
            })
            .clone()
    }

    pub fn vocabulary(&self) -> &MetricVocabulary {
        &self.vocabulary
    }

    pub fn lexicon(&self) -> &TagLexicon {
        &self.lexicon
    }

    pub fn extract_parameters(&self, statement: &str) -> BTreeMap<String, ParamValue> {
        self.patterns.extract(statement, &self.vocabulary)
    }

    pub fn extract_tags(&self, statement: &str) -> BTreeSet<String> {
        self.lexicon.extract(statement)
    }

    fn split(text: &str) -> (Vec<String>, Vec<String>) {
        let mut items = Vec::new();
        let mut remainder = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || header_re().is_match(line) {
                continue;
            }
            match marker_re().captures(line) {
                Some(c) => {
                    let stmt = c[1].trim();
                    if !stmt.is_empty() && !is_placeholder(stmt) {
                        items.push(stmt.to_string());
                    }
                }
                None => remainder.push(line.to_string()),
            }
        }
        (items, remainder)
    }

    fn require_items(text: &str, n: usize, kind: &str) -> Result<(), PromptError> {
        if n == 0 && !text.trim().is_empty() {
            return Err(PromptError::Format {
                kind: kind.to_string(),
                excerpt: text.chars().take(120).collect(),
            });
        }
        Ok(())
    }

    pub fn finding(&self, id: String, statement: &str, modality: Modality, iteration: u32) -> FindingItem {
        FindingItem {
            id,
            statement: statement.to_string(),
            source_modality: modality,
            parameters: self.extract_parameters(statement),
            agent_iteration: iteration,
        }
    }

    pub fn interpretation(&self, id: String, text: &str, iteration: u32) -> InterpretationItem {
        let (statement, supports) = match supports_re().captures(text) {
            Some(c) => (
                text[..c.get(0).unwrap().start()].trim().to_string(),
                c[1].split(',').map(|s| s.trim().to_string()).collect(),
            ),
            None => (text.to_string(), Vec::new()),
        };
        let diagnosis_tags = self.extract_tags(&statement);
        InterpretationItem {
            id,
            statement,
            diagnosis_tags,
            supports,
            agent_iteration: iteration,
        }
    }

    /// Parses a findings response. Items are numbered `F{first_id}`, `F{first_id + 1}`, ...
    pub fn parse_findings(
        &self,
        text: &str,
        modality: Modality,
        iteration: u32,
        first_id: usize,
    ) -> Result<Parsed<FindingItem>, PromptError> {
        let (lines, remainder) = Self::split(text);
        Self::require_items(text, lines.len(), "findings")?;
        let items = lines
            .iter()
            .enumerate()
            .map(|(i, s)| self.finding(format!("F{}", first_id + i), s, modality, iteration))
            .collect();
        Ok(Parsed { items, remainder })
    }

    /// Parses an interpretation response. Items are numbered from `I{first_id}`.
    pub fn parse_interpretation(
        &self,
        text: &str,
        iteration: u32,
        first_id: usize,
    ) -> Result<Parsed<InterpretationItem>, PromptError> {
        let (lines, remainder) = Self::split(text);
        Self::require_items(text, lines.len(), "interpretation")?;
        let items = lines
            .iter()
            .enumerate()
            .map(|(i, s)| self.interpretation(format!("I{}", first_id + i), s, iteration))
            .collect();
        Ok(Parsed { items, remainder })
    }
}

/// Parses `text` as the given item kind with ids starting at 1 and iteration 0.
pub fn parse_itemized(parser: &ItemParser, text: &str, kind: ItemKind) -> Result<ParsedItems, PromptError> {
    match kind {
        ItemKind::Findings(modality) => parser
            .parse_findings(text, modality, 0, 1)
            .map(ParsedItems::Findings),
        ItemKind::Interpretation => parser
            .parse_interpretation(text, 0, 1)
            .map(ParsedItems::Interpretation),
    }
}

pub fn render_findings(items: &[FindingItem]) -> String {
    items
        .iter()
        .map(|f| format!("- {}", f.statement))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_interpretation(items: &[InterpretationItem]) -> String {
    items
        .iter()
        .map(|i| {
            if i.supports.is_empty() {
                format!("- {}", i.statement)
            } else {
                format!("- {} [{}]", i.statement, i.supports.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}
