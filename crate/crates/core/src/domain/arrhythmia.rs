use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// Urgency class of an arrhythmia, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArrhythmiaClass {
    /// Normal (benign, physiological) arrhythmias.
    I,
    /// Clinically significant arrhythmias.
    II,
    /// Life-threatening arrhythmias.
    III,
}

impl ArrhythmiaClass {
    pub const ALL: [ArrhythmiaClass; 3] =
        [ArrhythmiaClass::I, ArrhythmiaClass::II, ArrhythmiaClass::III];

    pub fn as_str(self) -> &'static str {
        match self {
            ArrhythmiaClass::I => "I",
            ArrhythmiaClass::II => "II",
            ArrhythmiaClass::III => "III",
        }
    }
}

impl fmt::Display for ArrhythmiaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-folds, strips parenthetical segments and collapses whitespace:
/// `"Atrial Fibrillation (AF)"` becomes `"atrial fibrillation"`.
pub fn canonicalize_arrhythmia_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut depth = 0usize;
    for ch in name.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            _ if depth == 0 => out.extend(ch.to_lowercase()),
            _ => {}
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Deserialize)]
struct TableFile {
    version: u32,
    entries: Vec<TableEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableEntry {
    pub name: String,
    pub class: ArrhythmiaClass,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// Lookup from canonical arrhythmia names (and aliases) to their class.
#[derive(Debug, Clone)]
pub struct ArrhythmiaTable {
    version: u32,
    entries: Vec<TableEntry>,
    index: BTreeMap<String, usize>,
}

const BUILTIN: &str = include_str!("../../data/arrhythmia_classes.json");

impl ArrhythmiaTable {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("shipped arrhythmia table is valid")
    }

    pub fn from_json(raw: &str) -> Result<Self, DomainError> {
        let file: TableFile = serde_json::from_str(raw).map_err(|e| DomainError::DataFile {
            name: "arrhythmia_classes".into(),
            message: e.to_string(),
        })?;
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for (i, entry) in file.entries.iter().enumerate() {
            let names = std::iter::once(&entry.name).chain(entry.aliases.iter());
            for name in names {
                let key = canonicalize_arrhythmia_name(name);
                if key.is_empty() {
                    return Err(DomainError::DataFile {
                        name: "arrhythmia_classes".into(),
                        message: format!("`{name}` canonicalizes to an empty name"),
                    });
                }
                if let Some(&prev) = index.get::<String>(&key) {
                    if prev != i {
                        return Err(DomainError::DataFile {
                            name: "arrhythmia_classes".into(),
                            message: format!(
                                "`{name}` collides with `{}`",
                                file.entries[prev].name
                            ),
                        });
                    }
                }
                index.insert(key, i);
            }
        }
        Ok(Self {
            version: file.version,
            entries: file.entries,
            index,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    pub fn classify(&self, name: &str) -> Result<ArrhythmiaClass, DomainError> {
        self.index
            .get(&canonicalize_arrhythmia_name(name))
            .map(|&i| self.entries[i].class)
            .ok_or_else(|| DomainError::UnknownArrhythmia(name.to_string()))
    }

    /// Display name of the entry a tag resolves to.
    pub fn display_name(&self, name: &str) -> Option<&str> {
        self.index
            .get(&canonicalize_arrhythmia_name(name))
            .map(|&i| self.entries[i].name.as_str())
    }
}
