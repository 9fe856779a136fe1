//! Shared domain vocabulary: concepts, prompts, attribute questions, value
//! supports, images, answers, distributions and scores.
//!
//! Everything here is a plain value type. Types are built once and then only
//! read, so they can be handed to any pipeline stage (or thread) freely.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reserved mapped value for answers that fall outside the support, or for
/// images that do not depict the concept at all.
pub const NONE_OF_THE_ABOVE: &str = "none_of_the_above";

/// Trim, lowercase and collapse internal whitespace.
pub fn normalize_value(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when `raw` denotes the none-of-the-above sentinel in any of the
/// spellings a model tends to produce.
pub fn is_sentinel(raw: &str) -> bool {
    let v = normalize_value(raw).replace(['_', '-'], " ");
    v == "none of the above"
}

/// Lowercase alphanumeric tokens of `text`. Apostrophes are kept inside words.
pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn token_matches(token: &str, name_token: &str, last: bool) -> bool {
    if token == name_token {
        return true;
    }
    // plural of the head noun only: "cookies", "boxes"
    last && (token.strip_suffix('s') == Some(name_token) || token.strip_suffix("es") == Some(name_token))
}

/// Position (in tokens) of the first occurrence of `name` in `text` as a whole
/// word sequence, allowing a plural head noun.
pub(crate) fn find_concept_token(text: &str, name: &str) -> Option<(usize, usize)> {
    let text_tokens = tokens(text);
    let name_tokens = tokens(name);
    if name_tokens.is_empty() || text_tokens.len() < name_tokens.len() {
        return None;
    }
    (0..=text_tokens.len() - name_tokens.len())
        .find(|&start| {
            name_tokens
                .iter()
                .enumerate()
                .all(|(i, nt)| token_matches(&text_tokens[start + i], nt, i + 1 == name_tokens.len()))
        })
        .map(|start| (start, name_tokens.len()))
}

/// Whether `text` mentions the concept `name` as a token.
pub fn mentions_concept(text: &str, name: &str) -> bool {
    find_concept_token(text, name).is_some()
}

/// SHA-256 of `bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub name: String,
}

impl Concept {
    /// Builds a concept whose id is derived from the normalized name.
    pub fn from_name(name: &str) -> Self {
        let name = normalize_value(name);
        let id = name
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect();
        Concept { id, name }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Common,
    Uncommon,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptKind::Common => f.write_str("common"),
            PromptKind::Uncommon => f.write_str("uncommon"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub concept_id: String,
    pub text: String,
    pub kind: PromptKind,
    /// Index within `kind` for the concept.
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeQuestion {
    pub id: String,
    pub concept_id: String,
    pub attribute_label: String,
    pub question_text: String,
}

/// Approximate set of plausible values for one attribute question. The
/// sentinel is never a member and never counts toward the cardinality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    pub question_id: String,
    pub values: Vec<String>,
}

impl SupportSet {
    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn contains(&self, value: &str) -> bool {
        self.values.iter().any(|v| v == value)
    }

    /// Answer options offered to a model: the support plus the sentinel.
    pub fn options(&self) -> Vec<String> {
        let mut out = self.values.clone();
        out.push(NONE_OF_THE_ABOVE.to_string());
        out
    }
}

/// A question entry as stored in the schema file, with its support inline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSchema {
    #[serde(flatten)]
    pub question: AttributeQuestion,
    pub support: Vec<String>,
}

impl QuestionSchema {
    pub fn support_set(&self) -> SupportSet {
        SupportSet {
            question_id: self.question.id.clone(),
            values: self.support.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSchema {
    pub id: String,
    pub name: String,
    pub prompts: Vec<Prompt>,
    pub questions: Vec<QuestionSchema>,
}

impl ConceptSchema {
    pub fn concept(&self) -> Concept {
        Concept {
            id: self.id.clone(),
            name: self.name.clone(),
        }
    }
}

/// The schema file: every concept with its prompts, questions and supports.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub concepts: Vec<ConceptSchema>,
}

impl Schema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn concept(&self, concept_id: &str) -> Option<&ConceptSchema> {
        self.concepts.iter().find(|c| c.id == concept_id)
    }

    pub fn prompt(&self, prompt_id: &str) -> Option<(&ConceptSchema, &Prompt)> {
        self.concepts
            .iter()
            .find_map(|c| c.prompts.iter().find(|p| p.id == prompt_id).map(|p| (c, p)))
    }

    pub fn question(&self, question_id: &str) -> Option<(&ConceptSchema, &QuestionSchema)> {
        self.concepts.iter().find_map(|c| {
            c.questions
                .iter()
                .find(|q| q.question.id == question_id)
                .map(|q| (c, q))
        })
    }

    pub fn prompts(&self) -> impl Iterator<Item = &Prompt> {
        self.concepts.iter().flat_map(|c| c.prompts.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyId,
    DuplicateId,
    EmptyName,
    UnnormalizedName,
    ConceptMismatch,
    PromptMissingConcept,
    EmptyAttributeLabel,
    QuestionMissingMark,
    EmptySupport,
    UnnormalizedValue,
    DuplicateValue,
    SentinelInSupport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Id of the offending concept, prompt or question.
    pub id: String,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.id, self.rule, self.detail)
    }
}

/// Checks every structural invariant of a schema. Returns all violations
/// found; an empty list means the schema is valid.
pub fn validate_schema(schema: &Schema) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |id: &str, rule: Rule, detail: String| {
        out.push(Violation {
            id: id.to_string(),
            rule,
            detail,
        })
    };

    let mut concept_ids = HashSet::new();
    let mut prompt_ids = HashSet::new();
    let mut question_ids = HashSet::new();

    for concept in &schema.concepts {
        if concept.id.trim().is_empty() {
            push(
                &concept.id,
                Rule::EmptyId,
                format!("concept {:?} has an empty id", concept.name),
            );
        } else if !concept_ids.insert(concept.id.as_str()) {
            push(&concept.id, Rule::DuplicateId, "concept id repeated".into());
        }
        if concept.name.trim().is_empty() {
            push(&concept.id, Rule::EmptyName, "concept name is empty".into());
        } else if normalize_value(&concept.name) != concept.name {
            push(
                &concept.id,
                Rule::UnnormalizedName,
                format!("{:?} is not normalized", concept.name),
            );
        }

        for prompt in &concept.prompts {
            if prompt.id.trim().is_empty() {
                push(
                    &prompt.id,
                    Rule::EmptyId,
                    format!("prompt {:?} has an empty id", prompt.text),
                );
            } else if !prompt_ids.insert(prompt.id.as_str()) {
                push(&prompt.id, Rule::DuplicateId, "prompt id repeated".into());
            }
            if prompt.concept_id != concept.id {
                push(
                    &prompt.id,
                    Rule::ConceptMismatch,
                    format!("concept_id {:?} inside concept {:?}", prompt.concept_id, concept.id),
                );
            }
            if !mentions_concept(&prompt.text, &concept.name) {
                push(
                    &prompt.id,
                    Rule::PromptMissingConcept,
                    format!("{:?} does not mention {:?}", prompt.text, concept.name),
                );
            }
        }

        for entry in &concept.questions {
            let q = &entry.question;
            if q.id.trim().is_empty() {
                push(
                    &q.id,
                    Rule::EmptyId,
                    format!("question {:?} has an empty id", q.question_text),
                );
            } else if !question_ids.insert(q.id.as_str()) {
                push(&q.id, Rule::DuplicateId, "question id repeated".into());
            }
            if q.concept_id != concept.id {
                push(
                    &q.id,
                    Rule::ConceptMismatch,
                    format!("concept_id {:?} inside concept {:?}", q.concept_id, concept.id),
                );
            }
            if q.attribute_label.trim().is_empty() {
                push(&q.id, Rule::EmptyAttributeLabel, "attribute label is empty".into());
            }
            if !q.question_text.trim_end().ends_with('?') {
                push(
                    &q.id,
                    Rule::QuestionMissingMark,
                    format!("{:?} does not end with '?'", q.question_text),
                );
            }
            if entry.support.is_empty() {
                push(&q.id, Rule::EmptySupport, "support has no values".into());
            }
            let mut seen = HashSet::new();
            for value in &entry.support {
                let norm = normalize_value(value);
                if is_sentinel(value) || value == NONE_OF_THE_ABOVE {
                    push(&q.id, Rule::SentinelInSupport, format!("{value:?} is reserved"));
                    continue;
                }
                if norm != *value {
                    push(&q.id, Rule::UnnormalizedValue, format!("{value:?} is not normalized"));
                }
                if !seen.insert(norm) {
                    push(&q.id, Rule::DuplicateValue, format!("{value:?} listed more than once"));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub prompt_id: String,
    pub model_id: String,
    pub seed: u64,
    pub uri: String,
    pub content_hash: String,
}

impl ImageRecord {
    pub fn image_id(model_id: &str, prompt_id: &str, seed: u64) -> String {
        format!("{model_id}/{prompt_id}/{seed}")
    }
}

/// One answer to one question about one image.
///
/// `prompt_id` and `model_id` are carried along so answers files can be
/// scored without the image manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub image_id: String,
    pub question_id: String,
    pub prompt_id: String,
    pub model_id: String,
    pub raw_answer: String,
    pub mapped_value: String,
}

impl AnswerRecord {
    pub fn is_sentinel(&self) -> bool {
        self.mapped_value == NONE_OF_THE_ABOVE
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scope {
    SinglePrompt { prompt_id: String },
    MultiPrompt,
}

impl Scope {
    pub fn is_multi(&self) -> bool {
        matches!(self, Scope::MultiPrompt)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::SinglePrompt { prompt_id } => write!(f, "single:{prompt_id}"),
            Scope::MultiPrompt => f.write_str("multi"),
        }
    }
}

/// Estimated frequency of each support value for one question, either over
/// one prompt or averaged over all prompts of the concept.
///
/// When `valid` is false (every answer was the sentinel, or no prompt had a
/// counted answer) `probabilities` is empty and the distribution is excluded
/// from every aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDistribution {
    pub question_id: String,
    pub concept_id: String,
    pub scope: Scope,
    /// Frequency per support value, zero-filled over the full support.
    pub probabilities: BTreeMap<String, f64>,
    pub support_size: usize,
    pub n_counted: usize,
    pub n_discarded: usize,
    /// Number of single-prompt distributions averaged (1 for single-prompt).
    pub n_prompts: usize,
    pub valid: bool,
}

impl ValueDistribution {
    /// The most frequent value; ties go to the lexicographically smallest.
    pub fn mode(&self) -> Option<(&str, f64)> {
        self.probabilities
            .iter()
            .fold(None, |best: Option<(&str, f64)>, (v, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((v.as_str(), p)),
            })
    }

    pub fn total(&self) -> f64 {
        self.probabilities.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeScore {
    pub question_id: String,
    pub concept_id: String,
    pub scope: Scope,
    /// Normalized entropy in [0, 1].
    pub entropy: f64,
    pub support_cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub d_obs: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    /// Raw number of permutations with |D_perm| >= |D_obs|.
    pub n_extreme: usize,
    pub alpha: f64,
    pub significant: bool,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

/// Reads a JSONL file. Blank lines are skipped; a missing file reads as empty.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::parse(path, e))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Appends one JSON line to `path`, creating it if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_vec(item).map_err(|e| Error::parse(path, e))?;
    line.push(b'\n');
    file.write_all(&line).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(id: &str, concept: &str, text: &str, kind: PromptKind, ordinal: usize) -> Prompt {
        Prompt {
            id: id.into(),
            concept_id: concept.into(),
            text: text.into(),
            kind,
            ordinal,
        }
    }

    fn question(id: &str, concept: &str, label: &str, text: &str, support: &[&str]) -> QuestionSchema {
        QuestionSchema {
            question: AttributeQuestion {
                id: id.into(),
                concept_id: concept.into(),
                attribute_label: label.into(),
                question_text: text.into(),
            },
            support: support.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn concept(id: &str, name: &str, prompts: Vec<Prompt>, questions: Vec<QuestionSchema>) -> ConceptSchema {
        ConceptSchema {
            id: id.into(),
            name: name.into(),
            prompts,
            questions,
        }
    }

    /// The four sample rows of the published concept/attribute table.
    fn sample_table() -> Schema {
        Schema {
            concepts: vec![
                concept(
                    "teapot",
                    "teapot",
                    vec![prompt(
                        "teapot_common_0",
                        "teapot",
                        "a teapot on a kitchen counter",
                        PromptKind::Common,
                        0,
                    )],
                    vec![question(
                        "teapot_q0",
                        "teapot",
                        "shape",
                        "What shape is the teapot?",
                        &["rectangular", "spherical", "oval", "round", "square", "cylindrical"],
                    )],
                ),
                concept(
                    "person",
                    "person",
                    vec![prompt(
                        "person_common_0",
                        "person",
                        "a person at a train station",
                        PromptKind::Common,
                        0,
                    )],
                    vec![question(
                        "person_q0",
                        "person",
                        "company",
                        "Does the person appear to be alone or with others?",
                        &["alone", "with others"],
                    )],
                ),
                concept(
                    "suitcase",
                    "suitcase",
                    vec![prompt(
                        "suitcase_uncommon_0",
                        "suitcase",
                        "a suitcase floating in space",
                        PromptKind::Uncommon,
                        0,
                    )],
                    vec![question(
                        "suitcase_q0",
                        "suitcase",
                        "vintage",
                        "Is this a vintage suitcase?",
                        &["yes", "no"],
                    )],
                ),
                concept(
                    "bear",
                    "bear",
                    vec![prompt(
                        "bear_common_0",
                        "bear",
                        "a bear in a forest",
                        PromptKind::Common,
                        0,
                    )],
                    vec![question(
                        "bear_q0",
                        "bear",
                        "species",
                        "What species of bear is depicted in the image?",
                        &[
                            "polar bear",
                            "black bear",
                            "sloth bear",
                            "grizzly bear",
                            "sun bear",
                            "panda bear",
                        ],
                    )],
                ),
            ],
        }
    }

    #[test]
    fn sample_table_is_valid() {
        assert_eq!(validate_schema(&sample_table()), vec![]);
    }

    #[test]
    fn duplicate_support_value_is_one_violation() {
        let mut schema = sample_table();
        schema.concepts[0].questions[0].support = vec!["round".into(), "square".into(), "round".into()];
        let v = validate_schema(&schema);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, Rule::DuplicateValue);
        assert_eq!(v[0].id, "teapot_q0");
    }

    #[test]
    fn prompt_without_concept_is_one_violation() {
        let mut schema = sample_table();
        schema.concepts[3].prompts[0].text = "a grizzly in a forest".into();
        let v = validate_schema(&schema);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, Rule::PromptMissingConcept);
        assert_eq!(v[0].id, "bear_common_0");
    }

    #[test]
    fn scan_continues_past_bad_entries() {
        let mut schema = sample_table();
        schema.concepts[1].id = "teapot".into();
        schema.concepts[2].questions[0].question.question_text = "Is this a vintage suitcase".into();
        schema.concepts[2].questions[0].support.push(NONE_OF_THE_ABOVE.into());
        schema.concepts[0].prompts[0].id = "".into();
        let rules: Vec<Rule> = validate_schema(&schema).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::DuplicateId));
        assert!(rules.contains(&Rule::QuestionMissingMark));
        assert!(rules.contains(&Rule::SentinelInSupport));
        assert!(rules.contains(&Rule::EmptyId));
        // the person prompts/questions now sit under a concept with a mismatched id
        assert!(rules.contains(&Rule::ConceptMismatch) || rules.contains(&Rule::DuplicateId));
    }

    #[test]
    fn unnormalized_values_are_flagged() {
        let mut schema = sample_table();
        schema.concepts[0].questions[0].support = vec!["Round".into(), "round".into()];
        let rules: Vec<Rule> = validate_schema(&schema).into_iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![Rule::UnnormalizedValue, Rule::DuplicateValue]);
    }

    #[test]
    fn concept_token_matching() {
        assert!(mentions_concept("A Cookie during Christmas festivities", "cookie"));
        assert!(mentions_concept("two cookies on a plate", "cookie"));
        assert!(mentions_concept("a teddy bear on a bed", "teddy bear"));
        assert!(!mentions_concept("a cookiejar", "cookie"));
        assert!(!mentions_concept("a bear", "teddy bear"));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_value("  Polar   Bear "), "polar bear");
        assert!(is_sentinel("None of the above"));
        assert!(is_sentinel("none_of_the_above"));
        assert!(!is_sentinel("round"));
        assert_eq!(Concept::from_name("Teddy Bear").id, "teddy_bear");
    }

    #[test]
    fn schema_json_shape() {
        let text = serde_json::to_string(&sample_table()).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let q = &value["concepts"][0]["questions"][0];
        assert_eq!(q["id"], "teapot_q0");
        assert_eq!(q["support"][0], "rectangular");
        assert_eq!(value["concepts"][0]["prompts"][0]["kind"], "common");
    }

    #[test]
    fn mode_breaks_ties_lexicographically() {
        let dist = ValueDistribution {
            question_id: "q".into(),
            concept_id: "c".into(),
            scope: Scope::MultiPrompt,
            probabilities: [("b".to_string(), 0.5), ("a".to_string(), 0.5)].into_iter().collect(),
            support_size: 2,
            n_counted: 2,
            n_discarded: 0,
            n_prompts: 1,
            valid: true,
        };
        assert_eq!(dist.mode(), Some(("a", 0.5)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn value_strategy() -> impl Strategy<Value = String> {
            "[a-z]{1,8}( [a-z]{1,6})?"
        }

        fn schema_strategy() -> impl Strategy<Value = Schema> {
            prop::collection::vec(
                (
                    "[a-z]{3,8}",
                    prop::collection::vec("[a-z ]{0,20}", 1..4),
                    prop::collection::vec(prop::collection::btree_set(value_strategy(), 1..6), 1..4),
                ),
                1..4,
            )
            .prop_map(|rows| Schema {
                concepts: rows
                    .into_iter()
                    .enumerate()
                    .map(|(ci, (name, prompts, supports))| {
                        let id = format!("c{ci}");
                        ConceptSchema {
                            prompts: prompts
                                .into_iter()
                                .enumerate()
                                .map(|(pi, ctx)| Prompt {
                                    id: format!("{id}_p{pi}"),
                                    concept_id: id.clone(),
                                    text: format!("a {name} {ctx}"),
                                    kind: if pi % 2 == 0 {
                                        PromptKind::Common
                                    } else {
                                        PromptKind::Uncommon
                                    },
                                    ordinal: pi / 2,
                                })
                                .collect(),
                            questions: supports
                                .into_iter()
                                .enumerate()
                                .map(|(qi, s)| QuestionSchema {
                                    question: AttributeQuestion {
                                        id: format!("{id}_q{qi}"),
                                        concept_id: id.clone(),
                                        attribute_label: "attr".into(),
                                        question_text: format!("What attr is the {name}?"),
                                    },
                                    support: s.into_iter().collect(),
                                })
                                .collect(),
                            id,
                            name,
                        }
                    })
                    .collect(),
            })
        }

        proptest! {
            #[test]
            fn valid_schemas_round_trip(schema in schema_strategy()) {
                prop_assert_eq!(validate_schema(&schema), vec![]);
                let text = serde_json::to_string(&schema).unwrap();
                let back: Schema = serde_json::from_str(&text).unwrap();
                prop_assert_eq!(back, schema);
            }
        }
    }
}
