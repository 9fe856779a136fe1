//! Builds concept schemas with the language model: concepts, common and
//! uncommon prompts, attribute questions, and unified value supports.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends::{bounded, Client, ResponseSchema, StructuredRequest};
use crate::error::{Error, Result};
use crate::model::{
    find_concept_token, is_sentinel, mentions_concept, normalize_value, tokens, AttributeQuestion, Concept,
    ConceptSchema, Prompt, PromptKind, QuestionSchema, Schema, SupportSet,
};
use crate::templates::{render, Templates};

/// Extra requests allowed after the first when a generator comes up short.
pub const MAX_RETRY_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaOptions {
    pub n_common: usize,
    pub n_uncommon: usize,
    pub n_attributes: usize,
}

impl Default for SchemaOptions {
    fn default() -> Self {
        SchemaOptions {
            n_common: 3,
            n_uncommon: 3,
            n_attributes: 4,
        }
    }
}

const GENERIC_ATTRIBUTE_WORDS: &[&str] = &[
    // colors
    "red",
    "orange",
    "yellow",
    "green",
    "blue",
    "purple",
    "violet",
    "pink",
    "brown",
    "black",
    "white",
    "gray",
    "grey",
    "golden",
    "silver",
    "beige",
    "colorful",
    "colourful",
    // shapes
    "round",
    "square",
    "rectangular",
    "circular",
    "oval",
    "triangular",
    "spherical",
    "cylindrical",
    "heart-shaped",
    "star-shaped",
    // materials
    "wooden",
    "metal",
    "metallic",
    "plastic",
    "glass",
    "ceramic",
    "leather",
    "porcelain",
    "paper",
    "stone",
];

/// Words a prompt may not use to describe the concept. Matching is on whole
/// tokens (or token sequences), ignoring the concept's own mention.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blocklist {
    phrases: BTreeSet<String>,
}

impl Blocklist {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Common color, shape and material words.
    pub fn generic() -> Self {
        Self::empty().with(GENERIC_ATTRIBUTE_WORDS.iter().copied())
    }

    pub fn with<S: AsRef<str>>(mut self, words: impl IntoIterator<Item = S>) -> Self {
        self.phrases.extend(
            words
                .into_iter()
                .map(|w| normalize_value(w.as_ref()))
                .filter(|w| !w.is_empty()),
        );
        self
    }

    /// First blocked phrase found in `text`, if any.
    pub fn hit(&self, text: &str, concept: &str) -> Option<String> {
        let toks = tokens(text);
        let span = find_concept_token(text, concept).map(|(s, l)| s..s + l);
        self.phrases.iter().find_map(|phrase| {
            let ptoks = tokens(phrase);
            if ptoks.is_empty() || ptoks.len() > toks.len() {
                return None;
            }
            (0..=toks.len() - ptoks.len())
                .filter(|&start| toks[start..start + ptoks.len()] == ptoks[..])
                .find(|&start| {
                    let inside = span
                        .as_ref()
                        .is_some_and(|s| s.start <= start && start + ptoks.len() <= s.end);
                    !inside
                })
                .map(|_| phrase.clone())
        })
    }
}

fn list_schema(key: &str) -> ResponseSchema {
    ResponseSchema::Json {
        schema: json!({
            "type": "object",
            "required": [key],
            "properties": {key: {"type": "array", "items": {"type": "string"}}}
        }),
    }
}

fn strings(v: &Value, key: &str) -> Vec<String> {
    v[key]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .unwrap_or_default()
}

fn exclusion(label: &str, items: &[String]) -> String {
    if items.is_empty() {
        String::new()
    } else {
        format!("Do not repeat any of these {label}: {}.", items.join("; "))
    }
}

/// Result of building a whole schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaBuild {
    pub schema: Schema,
    /// Non-fatal findings, e.g. a prompt that names a value of the support.
    pub warnings: Vec<String>,
}

pub struct SchemaGenerator<'a> {
    client: &'a Client,
    templates: &'a Templates,
}

impl<'a> SchemaGenerator<'a> {
    pub fn new(client: &'a Client, templates: &'a Templates) -> Self {
        SchemaGenerator { client, templates }
    }

    fn ask(&self, prompt: String, schema: ResponseSchema) -> Result<Value> {
        Ok(self.client.llm_complete(&StructuredRequest::text(prompt, schema))?)
    }

    /// `n` distinct normalized concepts. Duplicates are dropped and the
    /// shortfall re-requested up to [`MAX_RETRY_ROUNDS`] times.
    pub fn generate_concepts(&self, n: usize) -> Result<Vec<Concept>> {
        if n == 0 {
            return Err(Error::Invalid("number of concepts must be at least 1".into()));
        }
        let mut names: Vec<String> = Vec::new();
        for _round in 0..=MAX_RETRY_ROUNDS {
            let wanted = n - names.len();
            let prompt = render(
                &self.templates.concept_collection,
                &[("n", &wanted.to_string()), ("exclude", &exclusion("concepts", &names))],
            );
            let reply = self.ask(prompt, list_schema("concepts"))?;
            for raw in strings(&reply, "concepts") {
                let name = normalize_value(&raw);
                if !name.is_empty() && !names.contains(&name) && names.len() < n {
                    names.push(name);
                }
            }
            if names.len() == n {
                return Ok(names.iter().map(|s| Concept::from_name(s)).collect());
            }
        }
        Err(Error::Generation(format!(
            "wanted {n} distinct concepts, got {}",
            names.len()
        )))
    }

    /// `n` prompts of `kind` for `concept`. Prompts that do not mention the
    /// concept, or that use a blocked attribute word, are rejected and
    /// regenerated up to [`MAX_RETRY_ROUNDS`] times.
    pub fn generate_prompts(
        &self,
        concept: &Concept,
        kind: PromptKind,
        n: usize,
        blocklist: &Blocklist,
    ) -> Result<Vec<Prompt>> {
        let template = match kind {
            PromptKind::Common => &self.templates.common_prompts,
            PromptKind::Uncommon => &self.templates.uncommon_prompts,
        };
        let mut accepted: Vec<String> = Vec::new();
        let mut seen: Vec<String> = Vec::new();
        for _round in 0..=MAX_RETRY_ROUNDS {
            if accepted.len() >= n {
                break;
            }
            let wanted = n - accepted.len();
            let prompt = render(
                template,
                &[
                    ("n", &wanted.to_string()),
                    ("concept", &concept.name),
                    ("exclude", &exclusion("prompts", &seen)),
                ],
            );
            let reply = self.ask(prompt, list_schema("prompts"))?;
            for text in strings(&reply, "prompts") {
                let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
                let key = normalize_value(&text);
                if text.is_empty() || seen.contains(&key) {
                    continue;
                }
                seen.push(key);
                if !mentions_concept(&text, &concept.name) {
                    log::info!("rejected prompt {text:?}: does not mention {:?}", concept.name);
                    continue;
                }
                if let Some(word) = blocklist.hit(&text, &concept.name) {
                    log::info!("rejected prompt {text:?}: specifies {word:?}");
                    continue;
                }
                if accepted.len() < n {
                    accepted.push(text);
                }
            }
        }
        if accepted.len() < n {
            return Err(Error::Generation(format!(
                "{} {kind} prompts for {:?}: only {} of {n} acceptable",
                concept.name,
                kind,
                accepted.len()
            )));
        }
        Ok(accepted
            .into_iter()
            .enumerate()
            .map(|(ordinal, text)| Prompt {
                id: format!("{}_{kind}_{ordinal}", concept.id),
                concept_id: concept.id.clone(),
                text,
                kind,
                ordinal,
            })
            .collect())
    }

    /// Attribute questions for `concept`, each ending in a question mark.
    pub fn generate_attributes(&self, concept: &Concept, n: usize) -> Result<Vec<AttributeQuestion>> {
        let prompt = render(
            &self.templates.attributes,
            &[("concept", &concept.name), ("n", &n.to_string())],
        );
        let schema = ResponseSchema::Json {
            schema: json!({
                "type": "object",
                "required": ["attributes"],
                "properties": {"attributes": {"type": "array", "items": {
                    "type": "object",
                    "required": ["attribute", "question"],
                    "properties": {"attribute": {"type": "string"}, "question": {"type": "string"}}
                }}}
            }),
        };
        let reply = self.ask(prompt, schema)?;
        let mut out: Vec<AttributeQuestion> = Vec::new();
        for item in reply["attributes"].as_array().into_iter().flatten() {
            let label = normalize_value(item["attribute"].as_str().unwrap_or_default());
            let mut question = item["question"].as_str().unwrap_or_default().trim().to_string();
            if label.is_empty() || question.is_empty() {
                continue;
            }
            if !question.ends_with('?') {
                question.push('?');
            }
            if out.iter().any(|q| q.question_text == question) {
                continue;
            }
            out.push(AttributeQuestion {
                id: format!("{}_q{}", concept.id, out.len()),
                concept_id: concept.id.clone(),
                attribute_label: label,
                question_text: question,
            });
        }
        if out.is_empty() {
            return Err(Error::Generation(format!(
                "no attribute questions for {:?}",
                concept.name
            )));
        }
        Ok(out)
    }

    /// Union of per-prompt candidate values, normalized, with synonyms
    /// collapsed onto their lexicographically smallest member. The result is
    /// sorted, so it does not depend on prompt order.
    pub fn generate_value_support(
        &self,
        concept: &Concept,
        question: &AttributeQuestion,
        prompts: &[Prompt],
    ) -> Result<SupportSet> {
        if prompts.is_empty() {
            return Err(Error::Invalid(format!(
                "question {}: at least one prompt is required",
                question.id
            )));
        }
        let mut union = BTreeSet::new();
        for p in prompts {
            let prompt = render(
                &self.templates.attribute_values,
                &[
                    ("concept", &concept.name),
                    ("question", &question.question_text),
                    ("prompt", &p.text),
                ],
            );
            let reply = self.ask(prompt, list_schema("values"))?;
            union.extend(
                strings(&reply, "values")
                    .iter()
                    .map(|v| normalize_value(v))
                    .filter(|v| !v.is_empty() && !is_sentinel(v) && v != crate::model::NONE_OF_THE_ABOVE),
            );
        }
        if union.is_empty() {
            return Err(Error::Generation(format!(
                "question {} ({:?}) has no candidate values",
                question.id, question.question_text
            )));
        }
        if union.len() > 1 {
            self.merge_synonyms(concept, question, &mut union)?;
        }
        Ok(SupportSet {
            question_id: question.id.clone(),
            values: union.into_iter().collect(),
        })
    }

    fn merge_synonyms(
        &self,
        concept: &Concept,
        question: &AttributeQuestion,
        values: &mut BTreeSet<String>,
    ) -> Result<()> {
        let listed = values.iter().map(|v| format!("\"{v}\"")).collect::<Vec<_>>().join(", ");
        let prompt = render(
            &self.templates.synonyms,
            &[
                ("concept", &concept.name),
                ("question", &question.question_text),
                ("values", &listed),
            ],
        );
        let schema = ResponseSchema::Json {
            schema: json!({
                "type": "object",
                "required": ["groups"],
                "properties": {"groups": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}}}
            }),
        };
        let reply = self.ask(prompt, schema)?;
        for group in reply["groups"].as_array().into_iter().flatten() {
            let members: BTreeSet<String> = group
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(Value::as_str)
                .map(normalize_value)
                .filter(|m| values.contains(m))
                .collect();
            let mut iter = members.into_iter();
            if let Some(_canonical) = iter.next() {
                for dup in iter {
                    values.remove(&dup);
                }
            }
        }
        Ok(())
    }

    /// Prompts, questions and supports for one concept.
    pub fn build_concept(&self, concept: &Concept, opts: &SchemaOptions) -> Result<(ConceptSchema, Vec<String>)> {
        let generic = Blocklist::generic();
        let mut prompts = self.generate_prompts(concept, PromptKind::Common, opts.n_common, &generic)?;
        prompts.extend(self.generate_prompts(concept, PromptKind::Uncommon, opts.n_uncommon, &generic)?);
        let questions = self.generate_attributes(concept, opts.n_attributes)?;

        let mut entries = Vec::new();
        let mut warnings = Vec::new();
        for q in questions {
            let support = self.generate_value_support(concept, &q, &prompts)?;
            let values_block = Blocklist::empty().with(&support.values);
            for p in &prompts {
                if let Some(word) = values_block.hit(&p.text, &concept.name) {
                    warnings.push(format!("prompt {} names {word:?}, a value of {}", p.id, q.id));
                }
            }
            entries.push(QuestionSchema {
                question: q,
                support: support.values,
            });
        }
        Ok((
            ConceptSchema {
                id: concept.id.clone(),
                name: concept.name.clone(),
                prompts,
                questions: entries,
            },
            warnings,
        ))
    }

    /// Builds every concept, up to the client's batch size at a time.
    pub fn build_schema(&self, concepts: &[Concept], opts: &SchemaOptions) -> Result<SchemaBuild> {
        let built: Vec<(ConceptSchema, Vec<String>)> = bounded(self.client.profile().batch_size, || {
            concepts
                .par_iter()
                .map(|c| self.build_concept(c, opts))
                .collect::<Result<_>>()
        })?;
        let mut warnings = Vec::new();
        let mut schema = Schema::default();
        for (c, w) in built {
            schema.concepts.push(c);
            warnings.extend(w);
        }
        warnings.extend(
            crate::model::validate_schema(&schema)
                .into_iter()
                .map(|v| v.to_string()),
        );
        Ok(SchemaBuild { schema, warnings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocklist_ignores_the_concept_itself() {
        let b = Blocklist::generic().with(["polar bear", "grizzly bear"]);
        assert_eq!(b.hit("a round cookie on a plate", "cookie").as_deref(), Some("round"));
        assert_eq!(b.hit("a cookie during Christmas festivities", "cookie"), None);
        assert_eq!(b.hit("a polar bear on the ice", "bear").as_deref(), Some("polar bear"));
        assert_eq!(b.hit("a bear in a forest", "bear"), None);
        // a blocked word that is the concept's own name is not a hit
        assert_eq!(
            Blocklist::empty().with(["glass"]).hit("a glass on a table", "glass"),
            None
        );
    }
}
