//! Training-caption filtering and comparison of dataset-side against
//! model-side value distributions.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{bounded, Client, ResponseSchema, StructuredRequest};
use crate::error::{Error, Result};
use crate::metrics::{aligned_vectors, normalized_entropy, pcc, tvd};
use crate::model::{
    content_hash, AttributeQuestion, Concept, ConceptSchema, ImageRecord, Prompt, PromptKind, Schema, ValueDistribution,
};
use crate::templates::{render, Templates};

pub const DEFAULT_CAP: usize = 150;
pub const DEFAULT_IMAGES_PER_CAPTION: usize = 20;

/// Model id under which dataset images are recorded.
pub const DATASET_MODEL_ID: &str = "dataset";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub caption: String,
    pub image_uri: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Reject,
    /// The backend failed; the caption is excluded.
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub verdict: Verdict,
    /// The backend's reply, or the error when undecided.
    pub reason: String,
}

/// Asks the language model whether `caption` mentions the concept as an
/// object without stating or implying the answer to `question`.
pub fn filter_caption(
    client: &Client,
    templates: &Templates,
    caption: &str,
    concept: &Concept,
    question: &AttributeQuestion,
) -> Result<FilterDecision> {
    if caption.trim().is_empty() {
        return Err(Error::Invalid("caption is empty".into()));
    }
    let prompt = render(
        &templates.caption_filter,
        &[
            ("concept", &concept.name),
            ("question", &question.question_text),
            ("caption", caption.trim()),
        ],
    );
    let req = StructuredRequest::text(prompt, ResponseSchema::enumerated(&["yes", "no"]));
    let decision = match client.llm_complete(&req) {
        Ok(v) => {
            let raw = v.as_str().unwrap_or_default().to_string();
            let verdict = if raw == "yes" { Verdict::Keep } else { Verdict::Reject };
            FilterDecision { verdict, reason: raw }
        }
        Err(e) => FilterDecision {
            verdict: Verdict::Undecided,
            reason: e.to_string(),
        },
    };
    log::debug!("caption {caption:?}: {:?} ({})", decision.verdict, decision.reason);
    Ok(decision)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// Kept captions in input order, at most `cap`.
    pub kept: Vec<CaptionRecord>,
    /// Captions classified before the cap was reached.
    pub n_seen: usize,
    pub n_rejected: usize,
    pub n_undecided: usize,
    pub cap: usize,
}

/// Classifies `captions` in order until `cap` are kept. Calls run in
/// parallel chunks of the client's batch size; the kept list follows input
/// order regardless of completion order.
pub fn collect_filtered(
    client: &Client,
    templates: &Templates,
    captions: &[CaptionRecord],
    concept: &Concept,
    question: &AttributeQuestion,
    cap: usize,
) -> Result<FilterOutcome> {
    let mut out = FilterOutcome {
        cap,
        ..FilterOutcome::default()
    };
    let chunk = client.profile().batch_size.max(1);
    for group in captions.chunks(chunk) {
        if out.kept.len() >= cap {
            break;
        }
        let decisions: Vec<Result<FilterDecision>> = bounded(chunk, || {
            group
                .par_iter()
                .map(|c| {
                    if c.caption.trim().is_empty() {
                        Ok(FilterDecision {
                            verdict: Verdict::Reject,
                            reason: "empty caption".into(),
                        })
                    } else {
                        filter_caption(client, templates, &c.caption, concept, question)
                    }
                })
                .collect()
        });
        for (record, decision) in group.iter().zip(decisions) {
            if out.kept.len() >= cap {
                break;
            }
            out.n_seen += 1;
            match decision?.verdict {
                Verdict::Keep => out.kept.push(record.clone()),
                Verdict::Reject => out.n_rejected += 1,
                Verdict::Undecided => out.n_undecided += 1,
            }
        }
    }
    if out.kept.len() < cap {
        log::warn!(
            "{}: only {} of {cap} captions passed the filter for {}",
            concept.name,
            out.kept.len(),
            question.id
        );
    }
    Ok(out)
}

/// Entropies of both sides, and their similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub question_id: String,
    pub entropy_model: f64,
    pub entropy_dataset: f64,
    /// `None` when either frequency vector has zero variance.
    pub pcc: Option<f64>,
    pub tvd: f64,
}

pub fn compare_to_reference(model: &ValueDistribution, dataset: &ValueDistribution) -> Result<Comparison> {
    let (x, y) = aligned_vectors(&model.probabilities, &dataset.probabilities);
    Ok(Comparison {
        question_id: model.question_id.clone(),
        entropy_model: normalized_entropy(model)?.entropy,
        entropy_dataset: normalized_entropy(dataset)?.entropy,
        pcc: pcc(&x, &y).ok(),
        tvd: tvd(model, dataset)?,
    })
}

/// One prompt per kept caption, reusing the concept's questions, for
/// generating model-side images.
pub fn caption_schema(concept: &ConceptSchema, kept: &[CaptionRecord]) -> Schema {
    let prompts = kept
        .iter()
        .enumerate()
        .map(|(ordinal, c)| Prompt {
            id: format!("{}_caption_{ordinal}", concept.id),
            concept_id: concept.id.clone(),
            text: c.caption.trim().to_string(),
            kind: PromptKind::Common,
            ordinal,
        })
        .collect();
    Schema {
        concepts: vec![ConceptSchema {
            prompts,
            ..concept.clone()
        }],
    }
}

/// A single synthetic prompt under which all dataset images are pooled.
pub fn dataset_schema(concept: &ConceptSchema) -> Schema {
    Schema {
        concepts: vec![ConceptSchema {
            prompts: vec![Prompt {
                id: format!("{}_dataset", concept.id),
                concept_id: concept.id.clone(),
                text: format!("{} (dataset images)", concept.name),
                kind: PromptKind::Common,
                ordinal: 0,
            }],
            ..concept.clone()
        }],
    }
}

/// Image records for the dataset images of `kept`, attached to the prompt
/// of [`dataset_schema`]. Unreadable images are skipped with a warning.
pub fn dataset_images(concept: &ConceptSchema, kept: &[CaptionRecord], base_dir: Option<&Path>) -> Vec<ImageRecord> {
    let prompt_id = format!("{}_dataset", concept.id);
    kept.iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let path = match base_dir {
                Some(dir) if Path::new(&c.image_uri).is_relative() => {
                    dir.join(&c.image_uri).to_string_lossy().into_owned()
                }
                _ => c.image_uri.clone(),
            };
            match crate::backends::read_image(&path) {
                Ok(bytes) => Some(ImageRecord {
                    id: ImageRecord::image_id(DATASET_MODEL_ID, &prompt_id, i as u64),
                    prompt_id: prompt_id.clone(),
                    model_id: DATASET_MODEL_ID.into(),
                    seed: i as u64,
                    uri: path,
                    content_hash: content_hash(&bytes),
                }),
                Err(e) => {
                    log::warn!("skipping dataset image: {e}");
                    None
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Scope;

    fn dist(pairs: &[(&str, f64)]) -> ValueDistribution {
        ValueDistribution {
            question_id: "cookie_q0".into(),
            concept_id: "cookie".into(),
            scope: Scope::MultiPrompt,
            probabilities: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            support_size: 3,
            n_counted: 10,
            n_discarded: 0,
            n_prompts: 1,
            valid: true,
        }
    }

    #[test]
    fn identical_sides() {
        let d = dist(&[("round", 0.6), ("square", 0.3), ("oval", 0.1)]);
        let c = compare_to_reference(&d, &d).unwrap();
        assert_eq!(c.tvd, 0.0);
        assert!((c.pcc.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c.entropy_model, c.entropy_dataset);
    }

    #[test]
    fn disjoint_point_masses() {
        let a = dist(&[("round", 1.0), ("square", 0.0), ("oval", 0.0)]);
        let b = dist(&[("round", 0.0), ("square", 1.0), ("oval", 0.0)]);
        let c = compare_to_reference(&a, &b).unwrap();
        assert_eq!(c.tvd, 1.0);
        assert_eq!(c.entropy_model, 0.0);
    }

    #[test]
    fn flat_side_has_no_correlation() {
        let a = dist(&[("round", 0.5), ("square", 0.5)]);
        let mut b = dist(&[("round", 0.5), ("square", 0.5)]);
        b.support_size = 2;
        let c = compare_to_reference(&a, &b).unwrap();
        assert_eq!(c.pcc, None);
        assert_eq!(c.tvd, 0.0);
    }

    #[test]
    fn swapping_sides_swaps_entropies_only() {
        let a = dist(&[("round", 0.7), ("square", 0.2), ("oval", 0.1)]);
        let b = dist(&[("round", 0.4), ("square", 0.4), ("oval", 0.2)]);
        let ab = compare_to_reference(&a, &b).unwrap();
        let ba = compare_to_reference(&b, &a).unwrap();
        assert_eq!(ab.tvd, ba.tvd);
        assert!((ab.pcc.unwrap() - ba.pcc.unwrap()).abs() < 1e-15);
        assert_eq!(ab.entropy_model, ba.entropy_dataset);
    }
}
