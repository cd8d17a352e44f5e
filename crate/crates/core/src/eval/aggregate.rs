use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::Rating;
use crate::domain::SubgroupKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Model,
    Metric,
    Gender,
    AgeGroup,
    Class,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Model => "model",
            Dimension::Metric => "metric",
            Dimension::Gender => "gender",
            Dimension::AgeGroup => "age_group",
            Dimension::Class => "class",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Dimension::Model, Dimension::Metric, Dimension::Gender, Dimension::AgeGroup, Dimension::Class]
            .into_iter()
            .find(|d| d.as_str() == s.trim())
            .ok_or_else(|| format!("unknown dimension `{s}` (model, metric, gender, age_group, class)"))
    }
}

/// Standard deviation flavour. Population is the default: the raters are the
/// whole population of interest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

/// What is needed to resolve dimensions beyond alias and metric: the sealed
/// alias maps (alias to model per patient) and each patient's subgroup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregationContext {
    pub alias_maps: BTreeMap<String, BTreeMap<String, String>>,
    pub subgroups: BTreeMap<String, SubgroupKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub group: BTreeMap<Dimension, String>,
    pub mean: f64,
    /// NaN for a sample deviation over one rating.
    pub std: f64,
    pub n: usize,
    /// `m.m (±s.s)`.
    pub display: String,
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    if std.is_nan() {
        format!("{mean:.1} (±n/a)")
    } else {
        format!("{mean:.1} (±{std:.1})")
    }
}

fn value_of(r: &Rating, dim: Dimension, ctx: &AggregationContext) -> Option<String> {
    let subgroup = || ctx.subgroups.get(&r.patient_id);
    Some(match dim {
        Dimension::Model => ctx
            .alias_maps
            .get(&r.patient_id)
            .and_then(|m| m.get(&r.model_alias))
            .cloned()
            .unwrap_or_else(|| r.model_alias.clone()),
        Dimension::Metric => r.metric.to_string(),
        Dimension::Gender => subgroup()?.gender.to_string(),
        Dimension::AgeGroup => subgroup()?.age_group.to_string(),
        Dimension::Class => subgroup()?.arrhythmia_class.to_string(),
    })
}

/// Mean and deviation over integer scores, computed from exact integer sums
/// so the result does not depend on input order.
fn moments(scores: &[u8], kind: StdKind) -> (f64, f64) {
    let n = scores.len() as u64;
    let sum: u64 = scores.iter().map(|&s| s as u64).sum();
    let sum_sq: u64 = scores.iter().map(|&s| (s as u64) * (s as u64)).sum();
    let mean = sum as f64 / n as f64;
    let numerator = (n * sum_sq - sum * sum) as f64;
    let var = match kind {
        StdKind::Population => numerator / (n * n) as f64,
        StdKind::Sample if n < 2 => f64::NAN,
        StdKind::Sample => numerator / (n * (n - 1)) as f64,
    };
    (mean, var.sqrt())
}

/// Groups ratings by the given dimensions. Ratings whose patient has no known
/// subgroup are left out of groupings that need one; groups with no ratings
/// never appear.
pub fn aggregate(
    ratings: &[Rating],
    group_by: &[Dimension],
    ctx: &AggregationContext,
    std_kind: StdKind,
) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<Vec<String>, Vec<u8>> = BTreeMap::new();
    'ratings: for r in ratings {
        let mut key = Vec::with_capacity(group_by.len());
        for &d in group_by {
            match value_of(r, d, ctx) {
                Some(v) => key.push(v),
                None => continue 'ratings,
            }
        }
        groups.entry(key).or_default().push(r.score);
    }
    groups
        .into_iter()
        .map(|(key, scores)| {
            let (mean, std) = moments(&scores, std_kind);
            AggregateRow {
                group: group_by.iter().copied().zip(key).collect(),
                mean,
                std,
                n: scores.len(),
                display: format_mean_std(mean, std),
            }
        })
        .collect()
}

/// CSV with one column per grouping dimension followed by mean, std, n, display.
pub fn subgroup_csv(rows: &[AggregateRow], group_by: &[Dimension]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = group_by.iter().map(|d| d.as_str()).collect();
    header.extend(["mean", "std", "n", "display"]);
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        let mut rec: Vec<String> = group_by
            .iter()
            .map(|d| row.group.get(d).cloned().unwrap_or_default())
            .collect();
        rec.extend([format!("{:.4}", row.mean), format!("{:.4}", row.std), row.n.to_string(), row.display.clone()]);
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// A matrix of means (1-5, `null` for empty cells) ready for a heat map.
pub fn heatmap_json(rows: &[AggregateRow], row_dim: Dimension, col_dim: Dimension) -> Value {
    let mut labels_r: Vec<String> = rows.iter().filter_map(|r| r.group.get(&row_dim).cloned()).collect();
    let mut labels_c: Vec<String> = rows.iter().filter_map(|r| r.group.get(&col_dim).cloned()).collect();
    labels_r.sort();
    labels_r.dedup();
    labels_c.sort();
    labels_c.dedup();
    let values: Vec<Vec<Value>> = labels_r
        .iter()
        .map(|lr| {
            labels_c
                .iter()
                .map(|lc| {
                    rows.iter()
                        .find(|r| r.group.get(&row_dim) == Some(lr) && r.group.get(&col_dim) == Some(lc))
                        .map_or(Value::Null, |r| json!(r.mean))
                })
                .collect()
        })
        .collect();
    json!({
        "row_dimension": row_dim,
        "column_dimension": col_dim,
        "rows": labels_r,
        "columns": labels_c,
        "values": values,
    })
}
