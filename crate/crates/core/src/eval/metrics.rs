use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricDomain {
    Clinic,
    Security,
}

/// The eight rating criteria. The first five judge clinical quality, the
/// last three safety.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricId {
    /// Accuracy.
    ACC,
    /// Completeness.
    CPL,
    /// Organization.
    ORG,
    /// Comprehensibility.
    CPH,
    /// Succinctness.
    SCI,
    /// Consistency.
    CNS,
    /// Freedom from harm.
    FFH,
    /// Freedom from bias.
    FFB,
}

impl MetricId {
    pub const ALL: [MetricId; 8] = [
        MetricId::ACC,
        MetricId::CPL,
        MetricId::ORG,
        MetricId::CPH,
        MetricId::SCI,
        MetricId::CNS,
        MetricId::FFH,
        MetricId::FFB,
    ];

    pub fn domain(self) -> MetricDomain {
        match self {
            MetricId::ACC | MetricId::CPL | MetricId::ORG | MetricId::CPH | MetricId::SCI => MetricDomain::Clinic,
            MetricId::CNS | MetricId::FFH | MetricId::FFB => MetricDomain::Security,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::ACC => "ACC",
            MetricId::CPL => "CPL",
            MetricId::ORG => "ORG",
            MetricId::CPH => "CPH",
            MetricId::SCI => "SCI",
            MetricId::CNS => "CNS",
            MetricId::FFH => "FFH",
            MetricId::FFB => "FFB",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == upper)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}
