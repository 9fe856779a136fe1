//! Answer extraction over generated images and estimation of value
//! distributions from the answers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{bounded, Client};
use crate::error::{Error, Result};
use crate::model::{
    append_jsonl, read_jsonl, write_jsonl, AnswerRecord, ImageRecord, Schema, Scope, SupportSet, ValueDistribution,
    NONE_OF_THE_ABOVE,
};
use crate::templates::Templates;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    /// (image, question) pairs already present in the answers file.
    pub skipped_existing: usize,
    /// Pairs sent to the VQA client in this run.
    pub requested: usize,
    pub answered: usize,
    pub failures: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
}

/// Answers every question of each image's concept and appends the records
/// to `answers_path`.
///
/// Pairs already present in the file are skipped, so an interrupted run can
/// be resumed. When the run finishes the file is rewritten in image order
/// and question order. A failing pair is logged and counted; it never aborts
/// the batch.
pub fn extract_answers(
    schema: &Schema,
    images: &[ImageRecord],
    client: &Client,
    templates: &Templates,
    answers_path: &Path,
) -> Result<(Vec<AnswerRecord>, ExtractStats)> {
    let mut work = Vec::new();
    for image in images {
        let (concept, _) = schema.prompt(&image.prompt_id).ok_or_else(|| {
            Error::Invalid(format!(
                "image {} refers to unknown prompt {}",
                image.id, image.prompt_id
            ))
        })?;
        for q in &concept.questions {
            work.push((image, concept, q));
        }
    }

    let existing: Vec<AnswerRecord> = read_jsonl(answers_path)?;
    let mut have: BTreeMap<(String, String), AnswerRecord> = existing
        .into_iter()
        .map(|a| ((a.image_id.clone(), a.question_id.clone()), a))
        .collect();
    let todo: Vec<_> = work
        .iter()
        .filter(|(img, _, q)| !have.contains_key(&(img.id.clone(), q.question.id.clone())))
        .collect();

    let before = client.stats();
    let failures = AtomicUsize::new(0);
    let sink = Mutex::new(());
    let fresh: Vec<AnswerRecord> = bounded(client.profile().batch_size, || {
        todo.par_iter()
            .filter_map(|(image, concept, q)| {
                match client.vqa_answer(image, &concept.concept(), &q.question, &q.support_set(), templates) {
                    Ok(rec) => {
                        let _guard = sink.lock().unwrap_or_else(|e| e.into_inner());
                        if let Err(e) = append_jsonl(answers_path, &rec) {
                            log::warn!("could not append answer: {e}");
                        }
                        Some(rec)
                    }
                    Err(e) => {
                        log::warn!("{} / {}: {e}", image.id, q.question.id);
                        failures.fetch_add(1, Ordering::Relaxed);
                        None
                    }
                }
            })
            .collect()
    });
    let after = client.stats();

    let stats = ExtractStats {
        skipped_existing: work.len() - todo.len(),
        requested: todo.len(),
        answered: fresh.len(),
        failures: failures.into_inner(),
        cache_hits: after.cache_hits - before.cache_hits,
        backend_calls: after.backend_calls - before.backend_calls,
    };
    for rec in fresh {
        have.insert((rec.image_id.clone(), rec.question_id.clone()), rec);
    }
    let mut ordered: Vec<AnswerRecord> = work
        .iter()
        .filter_map(|(img, _, q)| have.remove(&(img.id.clone(), q.question.id.clone())))
        .collect();
    ordered.extend(have.into_values());
    write_jsonl(answers_path, &ordered)?;
    Ok((ordered, stats))
}

/// Distribution of the answers for one (prompt, question).
///
/// Sentinel answers, and values outside the support, are counted in
/// `n_discarded`. The remaining counts are normalized over the full support.
pub fn estimate_single_prompt(
    concept_id: &str,
    prompt_id: &str,
    support: &SupportSet,
    answers: &[&AnswerRecord],
) -> ValueDistribution {
    let mut counts: BTreeMap<String, usize> = support.values.iter().map(|v| (v.clone(), 0)).collect();
    let mut n_discarded = 0;
    for a in answers {
        match counts.get_mut(&a.mapped_value) {
            Some(c) if a.mapped_value != NONE_OF_THE_ABOVE => *c += 1,
            _ => n_discarded += 1,
        }
    }
    let n_counted: usize = counts.values().sum();
    let valid = n_counted > 0;
    let probabilities = if valid {
        counts
            .into_iter()
            .map(|(v, c)| (v, c as f64 / n_counted as f64))
            .collect()
    } else {
        BTreeMap::new()
    };
    ValueDistribution {
        question_id: support.question_id.clone(),
        concept_id: concept_id.to_string(),
        scope: Scope::SinglePrompt {
            prompt_id: prompt_id.to_string(),
        },
        probabilities,
        support_size: support.cardinality(),
        n_counted,
        n_discarded,
        n_prompts: 1,
        valid,
    }
}

/// Unweighted mean of the valid single-prompt distributions. Invalid inputs
/// are dropped from the average; with none left the result is invalid.
pub fn estimate_multi_prompt(single: &[ValueDistribution]) -> Result<ValueDistribution> {
    let first = single
        .first()
        .ok_or_else(|| Error::Invalid("no single-prompt distributions to average".into()))?;
    if let Some(other) = single.iter().find(|d| d.question_id != first.question_id) {
        return Err(Error::Invalid(format!(
            "cannot average distributions of {} and {}",
            first.question_id, other.question_id
        )));
    }
    let valid: Vec<&ValueDistribution> = single.iter().filter(|d| d.valid).collect();
    let mut probabilities = BTreeMap::new();
    if !valid.is_empty() {
        let keys: BTreeSet<&String> = valid.iter().flat_map(|d| d.probabilities.keys()).collect();
        let n = valid.len() as f64;
        for key in keys {
            let sum: f64 = valid
                .iter()
                .map(|d| d.probabilities.get(key).copied().unwrap_or(0.0))
                .sum();
            probabilities.insert(key.clone(), sum / n);
        }
    }
    Ok(ValueDistribution {
        question_id: first.question_id.clone(),
        concept_id: first.concept_id.clone(),
        scope: Scope::MultiPrompt,
        probabilities,
        support_size: single.iter().map(|d| d.support_size).max().unwrap_or(0),
        n_counted: single.iter().map(|d| d.n_counted).sum(),
        n_discarded: single.iter().map(|d| d.n_discarded).sum(),
        n_prompts: valid.len(),
        valid: !valid.is_empty(),
    })
}

/// Every single-prompt and multi-prompt distribution of one model, in schema
/// order (per question: its prompts, then the multi-prompt average).
pub fn estimate_all(schema: &Schema, answers: &[AnswerRecord]) -> Result<Vec<ValueDistribution>> {
    let mut by_pair: BTreeMap<(&str, &str), Vec<&AnswerRecord>> = BTreeMap::new();
    for a in answers {
        by_pair
            .entry((a.prompt_id.as_str(), a.question_id.as_str()))
            .or_default()
            .push(a);
    }
    let mut out = Vec::new();
    for concept in &schema.concepts {
        for q in &concept.questions {
            let support = q.support_set();
            let singles: Vec<ValueDistribution> = concept
                .prompts
                .iter()
                .map(|p| {
                    let rows = by_pair
                        .get(&(p.id.as_str(), q.question.id.as_str()))
                        .map(Vec::as_slice)
                        .unwrap_or(&[]);
                    estimate_single_prompt(&concept.id, &p.id, &support, rows)
                })
                .collect();
            if singles.is_empty() {
                continue;
            }
            let multi = estimate_multi_prompt(&singles)?;
            out.extend(singles);
            out.push(multi);
        }
    }
    Ok(out)
}

/// Layout of distributions.json: question id, then scope label.
pub fn distributions_by_question(dists: &[ValueDistribution]) -> BTreeMap<String, BTreeMap<String, ValueDistribution>> {
    let mut out: BTreeMap<String, BTreeMap<String, ValueDistribution>> = BTreeMap::new();
    for d in dists {
        out.entry(d.question_id.clone())
            .or_default()
            .insert(d.scope.to_string(), d.clone());
    }
    out
}

/// Splits answers by the model that produced the image, keeping order.
pub fn answers_by_model(answers: &[AnswerRecord]) -> BTreeMap<String, Vec<AnswerRecord>> {
    let mut out: BTreeMap<String, Vec<AnswerRecord>> = BTreeMap::new();
    for a in answers {
        out.entry(a.model_id.clone()).or_default().push(a.clone());
    }
    out
}
