//! Clinical validation tooling: blinded questionnaires, Likert rating
//! ingestion and aggregation, output-stability scoring and fine-tuning
//! dataset export.

mod aggregate;
mod export;
mod metrics;
mod questionnaire;
mod ratings;
mod stability;

pub use aggregate::{aggregate, format_mean_std, heatmap_json, subgroup_csv, AggregateRow, AggregationContext, Dimension, StdKind};
pub use export::{export_finetune_dataset, to_jsonl, InstructionRecord};
pub use metrics::{MetricDomain, MetricId};
pub use questionnaire::{build_questionnaire, Questionnaire, QuestionnaireSection, SealedAliasMap};
pub use ratings::{parse_ratings_csv, IngestReport, Rating, RatingSet, RejectedRow};
pub use stability::{
    cosine_similarity, pairwise_similarity_variance, stability_score, Embedder, HashingEmbedder,
    HttpEmbedder, StabilityScore,
};

use thiserror::Error;

use crate::prompt::PromptError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("stability needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("reports are for different patients: {expected} and {found}")]
    PatientMismatch { expected: String, found: String },
    #[error("no reports given")]
    NoReports,
    #[error("invalid rating: {0}")]
    InvalidRating(String),
    #[error("duplicate rating for {0}")]
    DuplicateRating(String),
    #[error("bundle {patient_id} lacks adjudicated {what}")]
    MissingAdjudication { patient_id: String, what: String },
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}
