//! Prompt construction and response parsing for the three agents.
//!
//! A prompt is the role's system text, a handful of subgroup-matched solved
//! demonstrations, and the patient payload followed by the response skeleton.
//! Responses come back as itemized lists and are parsed into findings or
//! interpretation items.

mod build;
mod demos;
mod itemized;
mod templates;

pub use build::{payload_text, render_input, ImageLocator, PromptBuilder};
pub use demos::{
    build_demo_library, select_demos, Demo, DemoBank, DemoLibrary, MatchLevel, SelectedDemo,
    Selection,
};
pub use itemized::{
    parse_itemized, render_findings, render_interpretation, ItemKind, ItemParser, Parsed,
    ParsedItems, PatternTable, TagLexicon,
};
pub use templates::{PromptTemplate, PromptTemplates};

use thiserror::Error;

use crate::agent::Role;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("no prompt template for role {0}")]
    TemplateMissing(Role),
    /// The response contained no itemized lines.
    #[error("{kind} response has no itemized items: {excerpt:?}")]
    Format { kind: String, excerpt: String },
    #[error("the F2I prompt needs upstream findings")]
    MissingUpstream,
    #[error("invalid prompt data: {0}")]
    Data(String),
    #[error("invalid demo bank: {0}")]
    Demo(String),
}
