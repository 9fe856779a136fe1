//! Prompt templates sent to the language and vision models.
//!
//! Defaults are compiled in from `templates/*.txt`; a directory holding files
//! with the same names overrides them one by one. Placeholders are written
//! `{name}` and replaced verbatim, so JSON examples inside templates are left
//! alone.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Templates {
    pub concept_collection: String,
    pub common_prompts: String,
    pub uncommon_prompts: String,
    pub attributes: String,
    pub attribute_values: String,
    pub synonyms: String,
    pub answer: String,
    pub answer_mapping: String,
    pub caption_filter: String,
}

const FILES: [&str; 9] = [
    "concept_collection.txt",
    "common_prompt_generation.txt",
    "uncommon_prompt_generation.txt",
    "attribute_generation.txt",
    "attribute_values_generation.txt",
    "synonym_unification.txt",
    "generating_answers.txt",
    "answer_mapping.txt",
    "caption_filtering.txt",
];

impl Default for Templates {
    fn default() -> Self {
        Templates {
            concept_collection: include_str!("../templates/concept_collection.txt").into(),
            common_prompts: include_str!("../templates/common_prompt_generation.txt").into(),
            uncommon_prompts: include_str!("../templates/uncommon_prompt_generation.txt").into(),
            attributes: include_str!("../templates/attribute_generation.txt").into(),
            attribute_values: include_str!("../templates/attribute_values_generation.txt").into(),
            synonyms: include_str!("../templates/synonym_unification.txt").into(),
            answer: include_str!("../templates/generating_answers.txt").into(),
            answer_mapping: include_str!("../templates/answer_mapping.txt").into(),
            caption_filter: include_str!("../templates/caption_filtering.txt").into(),
        }
    }
}

impl Templates {
    /// Defaults, with any file present in `dir` taking precedence.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut out = Templates::default();
        for name in FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            *out.slot(name) = text;
        }
        Ok(out)
    }

    fn slot(&mut self, file: &str) -> &mut String {
        match file {
            "concept_collection.txt" => &mut self.concept_collection,
            "common_prompt_generation.txt" => &mut self.common_prompts,
            "uncommon_prompt_generation.txt" => &mut self.uncommon_prompts,
            "attribute_generation.txt" => &mut self.attributes,
            "attribute_values_generation.txt" => &mut self.attribute_values,
            "synonym_unification.txt" => &mut self.synonyms,
            "generating_answers.txt" => &mut self.answer,
            "answer_mapping.txt" => &mut self.answer_mapping,
            "caption_filtering.txt" => &mut self.caption_filter,
            other => unreachable!("unknown template {other}"),
        }
    }

    /// Writes every template to `dir` so they can be edited.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut copy = self.clone();
        for name in FILES {
            let path = dir.join(name);
            fs::write(&path, copy.slot(name).as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Substitutes each `{key}` in `template`.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}
