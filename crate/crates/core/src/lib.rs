//! Attribute-diversity evaluation for text-to-image models.
//!
//! The pipeline builds a schema of concepts, prompts and attribute questions
//! with a language model, answers the questions about generated images with a
//! vision model, estimates per-prompt and averaged value distributions, and
//! scores each with normalized entropy.

pub mod backends;
pub mod caption_filter;
pub mod config;
pub mod error;
pub mod extraction;
pub mod metrics;
pub mod model;
pub mod reporting;
pub mod schema_gen;
pub mod stats;
pub mod templates;

pub use error::{Error, Result};
pub use model::{
    AnswerRecord, AttributeQuestion, Concept, GradeScore, ImageRecord, PermutationTestResult, Prompt, PromptKind,
    Schema, Scope, SupportSet, ValueDistribution, NONE_OF_THE_ABOVE,
};
