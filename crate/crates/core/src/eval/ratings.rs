use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricId};

/// One Likert score (1-5) from one rater for one blinded model output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rating {
    pub rater_id: String,
    pub patient_id: String,
    pub model_alias: String,
    pub metric: MetricId,
    pub score: u8,
}

type RatingKey = (String, String, String, MetricId);

impl Rating {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(1..=5).contains(&self.score) {
            return Err(EvalError::InvalidRating(format!("score {} is outside 1..=5", self.score)));
        }
        for (name, v) in [
            ("rater_id", &self.rater_id),
            ("patient_id", &self.patient_id),
            ("model_alias", &self.model_alias),
        ] {
            if v.trim().is_empty() {
                return Err(EvalError::InvalidRating(format!("{name} is empty")));
            }
        }
        Ok(())
    }

    fn key(&self) -> RatingKey {
        (
            self.rater_id.clone(),
            self.patient_id.clone(),
            self.model_alias.clone(),
            self.metric,
        )
    }
}

/// Ratings unique by (rater, patient, alias, metric). Duplicates are
/// rejected, never averaged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingSet {
    ratings: Vec<Rating>,
    keys: BTreeSet<RatingKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the input (the header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
}

impl RatingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, rating: Rating) -> Result<(), EvalError> {
        rating.validate()?;
        let key = rating.key();
        if self.keys.contains(&key) {
            return Err(EvalError::DuplicateRating(format!(
                "rater {} / patient {} / {} / {}",
                key.0, key.1, key.2, key.3
            )));
        }
        self.keys.insert(key);
        self.ratings.push(rating);
        Ok(())
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// Inserts what it can and reports the rest. Lines are 1-based item
    /// positions.
    pub fn extend_report(&mut self, ratings: impl IntoIterator<Item = Rating>) -> IngestReport {
        self.insert_lines(ratings.into_iter().enumerate().map(|(i, r)| (i + 1, r)))
    }

    /// Inserts ratings tagged with their source line numbers.
    pub fn insert_lines(&mut self, ratings: impl IntoIterator<Item = (usize, Rating)>) -> IngestReport {
        let mut report = IngestReport::default();
        for (line, r) in ratings {
            match self.insert(r) {
                Ok(()) => report.accepted += 1,
                Err(e) => report.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                }),
            }
        }
        report
    }

    /// Reads `rater_id,patient_id,model_alias,metric,score` CSV.
    pub fn ingest_csv(&mut self, raw: &[u8]) -> IngestReport {
        let (rows, mut malformed) = parse_ratings_csv(raw);
        let mut report = self.insert_lines(rows);
        report.rejected.append(&mut malformed);
        report.rejected.sort_by_key(|r| r.line);
        report
    }
}

/// Parses and validates rating CSV without checking for duplicates. Returns
/// the well-formed rows with their line numbers, and the malformed ones.
pub fn parse_ratings_csv(raw: &[u8]) -> (Vec<(usize, Rating)>, Vec<RejectedRow>) {
    let mut rows = Vec::new();
    let mut malformed = Vec::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(raw);
    let expected = ["rater_id", "patient_id", "model_alias", "metric", "score"];
    match reader.headers() {
        Ok(h) if h.iter().eq(expected) => {}
        Ok(h) => {
            malformed.push(RejectedRow {
                line: 1,
                reason: format!("expected header {}, got {}", expected.join(","), h.iter().collect::<Vec<_>>().join(",")),
            });
            return (rows, malformed);
        }
        Err(e) => {
            malformed.push(RejectedRow { line: 1, reason: e.to_string() });
            return (rows, malformed);
        }
    }
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let parsed = row.map_err(|e| e.to_string()).and_then(|r| {
            let metric = r[3].parse::<MetricId>()?;
            let score = r[4].parse::<u8>().map_err(|_| format!("score `{}` is not an integer", &r[4]))?;
            let rating = Rating {
                rater_id: r[0].to_string(),
                patient_id: r[1].to_string(),
                model_alias: r[2].to_string(),
                metric,
                score,
            };
            rating.validate().map_err(|e| e.to_string())?;
            Ok(rating)
        });
        match parsed {
            Ok(r) => rows.push((line, r)),
            Err(reason) => malformed.push(RejectedRow { line, reason }),
        }
    }
    (rows, malformed)
}
