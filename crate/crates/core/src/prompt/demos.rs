use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::build::render_input;
use super::itemized::{render_findings, render_interpretation, ItemKind, ItemParser};
use super::{parse_itemized, PromptError};
use crate::agent::Role;
use crate::canonical::content_digest;
use crate::domain::{subgroup_key, AgeBands, ArrhythmiaTable, Modality, PatientBundle, SubgroupKey};
use crate::factcheck::GuidelineSet;

/// One cardiologist-adjudicated solved example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub id: String,
    pub key: SubgroupKey,
    pub input_excerpt: String,
    pub adjudicated_output: String,
}

/// How far a selected demo's key is from the query key. Dimensions are
/// relaxed in the order arrhythmia class, then age group, then gender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLevel {
    Exact,
    ClassRelaxed,
    AgeRelaxed,
    GenderRelaxed,
}

impl MatchLevel {
    pub const ALL: [MatchLevel; 4] = [
        MatchLevel::Exact,
        MatchLevel::ClassRelaxed,
        MatchLevel::AgeRelaxed,
        MatchLevel::GenderRelaxed,
    ];

    /// The strictest level at which `candidate` matches `query`.
    pub fn between(query: &SubgroupKey, candidate: &SubgroupKey) -> Self {
        if query.gender != candidate.gender {
            MatchLevel::GenderRelaxed
        } else if query.age_group != candidate.age_group {
            MatchLevel::AgeRelaxed
        } else if query.arrhythmia_class != candidate.arrhythmia_class {
            MatchLevel::ClassRelaxed
        } else {
            MatchLevel::Exact
        }
    }
}

/// Demos for a single agent role, indexed by subgroup key.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoBank {
    role: Role,
    bank_version: String,
    demos: Vec<Demo>,
    index: BTreeMap<SubgroupKey, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    #[serde(default)]
    bank_version: Option<String>,
    demos: Vec<Demo>,
}

impl DemoBank {
    pub fn new(role: Role, mut demos: Vec<Demo>) -> Result<Self, PromptError> {
        demos.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = demos.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(PromptError::Demo(format!("duplicate demo id {}", w[0].id)));
        }
        let mut index: BTreeMap<SubgroupKey, Vec<usize>> = BTreeMap::new();
        for (i, d) in demos.iter().enumerate() {
            index.entry(d.key).or_default().push(i);
        }
        let bank_version = content_digest(&(role, &demos));
        Ok(Self {
            role,
            bank_version,
            demos,
            index,
        })
    }

    pub fn empty(role: Role) -> Self {
        Self::new(role, Vec::new()).expect("an empty bank is valid")
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn version(&self) -> &str {
        &self.bank_version
    }

    pub fn demos(&self) -> &[Demo] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn exact(&self, key: &SubgroupKey) -> impl Iterator<Item = &Demo> {
        self.index
            .get(key)
            .into_iter()
            .flatten()
            .map(|&i| &self.demos[i])
    }

    /// Checks that every adjudicated output parses as the role's item kind.
    pub fn validate(&self, parser: &ItemParser) -> Result<(), PromptError> {
        let kind = match self.role {
            Role::M2F => ItemKind::Findings(Modality::Metrics),
            Role::T2F => ItemKind::Findings(Modality::Tracing),
            Role::F2I => ItemKind::Interpretation,
        };
        for d in &self.demos {
            let empty = d.adjudicated_output.trim().is_empty();
            if empty || parse_itemized(parser, &d.adjudicated_output, kind).is_err() {
                return Err(PromptError::Demo(format!(
                    "demo {} output is not an itemized list",
                    d.id
                )));
            }
        }
        Ok(())
    }
}

/// Per-role demo banks, stored as one JSON file.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoLibrary {
    banks: BTreeMap<Role, DemoBank>,
}

impl Default for DemoLibrary {
    fn default() -> Self {
        Self {
            banks: Role::ALL.into_iter().map(|r| (r, DemoBank::empty(r))).collect(),
        }
    }
}

impl DemoLibrary {
    pub fn new(banks: impl IntoIterator<Item = DemoBank>) -> Self {
        let mut lib = Self::default();
        for b in banks {
            lib.banks.insert(b.role, b);
        }
        lib
    }

    pub fn bank(&self, role: Role) -> &DemoBank {
        &self.banks[&role]
    }

    /// Combined version over all three banks.
    pub fn version(&self) -> String {
        let versions: BTreeMap<Role, &str> = self.banks.iter().map(|(r, b)| (*r, b.version())).collect();
        content_digest(&versions)
    }

    pub fn from_json(raw: &str, parser: &ItemParser) -> Result<Self, PromptError> {
        let files: BTreeMap<Role, BankFile> =
            serde_json::from_str(raw).map_err(|e| PromptError::Demo(e.to_string()))?;
        let mut lib = Self::default();
        for (role, file) in files {
            let bank = DemoBank::new(role, file.demos)?;
            if let Some(stated) = file.bank_version {
                if stated != bank.bank_version {
                    return Err(PromptError::Demo(format!(
                        "{role} bank_version {stated} does not match its contents"
                    )));
                }
            }
            bank.validate(parser)?;
            lib.banks.insert(role, bank);
        }
        Ok(lib)
    }

    pub fn to_json(&self) -> String {
        let files: BTreeMap<Role, BankFile> = self
            .banks
            .iter()
            .map(|(r, b)| {
                (
                    *r,
                    BankFile {
                        bank_version: Some(b.bank_version.clone()),
                        demos: b.demos.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_string_pretty(&files).expect("demo library serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedDemo {
    pub demo: Demo,
    pub level: MatchLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub demos: Vec<SelectedDemo>,
    /// No demos were available; the prompt will be zero-shot.
    pub zero_shot: bool,
}

impl Selection {
    pub fn ids(&self) -> Vec<String> {
        self.demos.iter().map(|s| s.demo.id.clone()).collect()
    }

    pub fn into_demos(self) -> Vec<Demo> {
        self.demos.into_iter().map(|s| s.demo).collect()
    }
}

fn rank(bank_version: &str, seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(bank_version.as_bytes());
    h.update(b"\n");
    h.update(seed.to_string().as_bytes());
    h.update(b"\n");
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Picks up to `n` demos for `key`. Exact matches come first; when they run
/// out the class, then age group, then gender are relaxed in turn. Within a
/// level, demos are ordered by a seeded hash of their id, which is a uniform
/// random permutation that depends only on (bank version, seed).
pub fn select_demos(bank: &DemoBank, key: &SubgroupKey, n: usize, seed: u64) -> Result<Selection, PromptError> {
    if n == 0 {
        return Err(PromptError::Demo("n must be at least 1".into()));
    }
    let mut strata: BTreeMap<MatchLevel, Vec<([u8; 32], &Demo)>> = BTreeMap::new();
    for d in &bank.demos {
        strata
            .entry(MatchLevel::between(key, &d.key))
            .or_default()
            .push((rank(&bank.bank_version, seed, &d.id), d));
    }
    let mut demos = Vec::with_capacity(n);
    for (level, mut stratum) in strata {
        stratum.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
        for (_, d) in stratum {
            if demos.len() == n {
                break;
            }
            demos.push(SelectedDemo {
                demo: d.clone(),
                level,
            });
        }
    }
    Ok(Selection {
        zero_shot: demos.is_empty(),
        demos,
    })
}

/// Builds demo banks from adjudicated bundles. Each bundle contributes at
/// most one demo per role, with id `<patient_id>:<role>`.
pub fn build_demo_library(
    bundles: &[PatientBundle],
    table: &ArrhythmiaTable,
    bands: &AgeBands,
    guidelines: &GuidelineSet,
    parser: &ItemParser,
) -> Result<DemoLibrary, PromptError> {
    let mut per_role: BTreeMap<Role, Vec<Demo>> = BTreeMap::new();
    for b in bundles {
        let key = subgroup_key(b, table, bands).map_err(|e| PromptError::Demo(e.to_string()))?;
        let Some(findings) = &b.adjudicated_findings else {
            continue;
        };
        let mut push = |role: Role, input: String, output: String| {
            per_role.entry(role).or_default().push(Demo {
                id: format!("{}:{}", b.patient_id(), role),
                key,
                input_excerpt: input,
                adjudicated_output: output,
            });
        };
        for (role, modality) in [(Role::M2F, Modality::Metrics), (Role::T2F, Modality::Tracing)] {
            let items: Vec<_> = findings
                .iter()
                .filter(|f| f.source_modality == modality)
                .cloned()
                .collect();
            if items.is_empty() || (role == Role::T2F && b.tracings.is_empty()) {
                continue;
            }
            push(role, render_input(role, b, None, guidelines)?, render_findings(&items));
        }
        if let Some(interp) = b.adjudicated_interpretation.as_ref().filter(|i| !i.is_empty()) {
            if !findings.is_empty() {
                push(
                    Role::F2I,
                    render_input(Role::F2I, b, Some(findings), guidelines)?,
                    render_interpretation(interp),
                );
            }
        }
    }
    let mut banks = Vec::new();
    for (role, demos) in per_role {
        let bank = DemoBank::new(role, demos)?;
        bank.validate(parser)?;
        banks.push(bank);
    }
    Ok(DemoLibrary::new(banks))
}
