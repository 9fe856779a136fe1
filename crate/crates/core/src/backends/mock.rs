//! Deterministic fixture-driven backend.
//!
//! Fixtures are JSONL, one rule per line, first match wins:
//!
//! ```text
//! {"request_hash": "<sha256>", "response": ...}
//! {"matcher": {"role": "vqa", "contains": ["shape"], "image_contains": ["round cookie"]}, "response": ...}
//! ```
//!
//! `contains` is matched case-insensitively against the prompt text and
//! `image_contains` against the image bytes. Exact `request_hash` rules take
//! precedence over matchers.
//!
//! For the t2i role, a matching rule's response `{"tags": [["round cookie", 98], ["square cookie", 2]]}`
//! assigns the image with seed `s` the tag at position `s mod total_weight`
//! of the weight-expanded list, so seeds `0..total_weight` reproduce the
//! weights exactly. Mock images are small text blobs recording the tag.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{RenderRequest, RequestBody, Role, Transport, TransportError};
use crate::error::Result;
use crate::model::read_jsonl;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct Matcher {
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default)]
    pub image_contains: Vec<String>,
}

impl Matcher {
    fn matches(&self, role: Role, prompt: &str, image: Option<&[u8]>) -> bool {
        if self.role.is_some_and(|r| r != role) {
            return false;
        }
        let prompt = prompt.to_lowercase();
        if !self.contains.iter().all(|c| prompt.contains(&c.to_lowercase())) {
            return false;
        }
        if self.image_contains.is_empty() {
            return true;
        }
        let Some(bytes) = image else { return false };
        let text = String::from_utf8_lossy(bytes).to_lowercase();
        self.image_contains.iter().all(|c| text.contains(&c.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Fixture {
    #[serde(default)]
    pub request_hash: Option<String>,
    #[serde(default)]
    pub matcher: Option<Matcher>,
    pub response: Value,
}

#[derive(Debug, Clone, Default)]
pub struct MockTransport {
    fixtures: Vec<Fixture>,
}

impl MockTransport {
    pub fn new(fixtures: Vec<Fixture>) -> Self {
        MockTransport { fixtures }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(read_jsonl(path)?))
    }

    fn lookup(&self, role: Role, hash: Option<&str>, prompt: &str, image: Option<&[u8]>) -> Option<&Value> {
        if let Some(hash) = hash {
            if let Some(f) = self.fixtures.iter().find(|f| f.request_hash.as_deref() == Some(hash)) {
                return Some(&f.response);
            }
        }
        self.fixtures
            .iter()
            .filter(|f| f.request_hash.is_none())
            .find(|f| f.matcher.as_ref().is_none_or(|m| m.matches(role, prompt, image)))
            .map(|f| &f.response)
    }
}

/// Tag assigned to `seed` by a weighted tag list.
fn pick_tag(tags: &Value, seed: u64) -> Option<String> {
    let entries: Vec<(String, u64)> = tags
        .as_array()?
        .iter()
        .filter_map(|t| match t {
            Value::String(s) => Some((s.clone(), 1)),
            Value::Array(pair) => Some((pair.first()?.as_str()?.to_string(), pair.get(1)?.as_u64()?)),
            _ => None,
        })
        .filter(|(_, w)| *w > 0)
        .collect();
    let total: u64 = entries.iter().map(|(_, w)| w).sum();
    if total == 0 {
        return None;
    }
    let mut slot = seed % total;
    for (tag, w) in entries {
        if slot < w {
            return Some(tag);
        }
        slot -= w;
    }
    None
}

/// Bytes of a mock image.
pub fn mock_image_bytes(model: &str, prompt: &str, seed: u64, tag: &str) -> Vec<u8> {
    format!("MOCK-IMAGE v1\nmodel: {model}\nprompt: {prompt}\nseed: {seed}\ntag: {tag}\n").into_bytes()
}

impl Transport for MockTransport {
    fn complete(&self, body: &RequestBody<'_>, hash: &str, image: Option<&[u8]>) -> Result<Value, TransportError> {
        self.lookup(body.role, Some(hash), &body.request.prompt_text, image)
            .cloned()
            .ok_or_else(|| {
                TransportError::Fatal(format!(
                    "no mock fixture matches {} request {hash} ({:?})",
                    body.role,
                    body.request.prompt_text.lines().next().unwrap_or("")
                ))
            })
    }

    fn render(&self, req: &RenderRequest<'_>) -> Result<Vec<u8>, TransportError> {
        let tag = self
            .lookup(Role::T2i, None, req.prompt_text, None)
            .and_then(|r| r.get("tags"))
            .and_then(|t| pick_tag(t, req.seed))
            .unwrap_or_default();
        Ok(mock_image_bytes(req.model_name, req.prompt_text, req.seed, &tag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn weighted_tags_cycle_over_seeds() {
        let tags = json!([["round", 98], ["square", 2]]);
        let picked: Vec<String> = (0..100).map(|s| pick_tag(&tags, s).unwrap()).collect();
        assert_eq!(picked.iter().filter(|t| *t == "round").count(), 98);
        assert_eq!(pick_tag(&tags, 98).unwrap(), "square");
        assert_eq!(pick_tag(&tags, 100).unwrap(), "round");
        assert_eq!(pick_tag(&json!(["a", "b"]), 3).unwrap(), "b");
        assert_eq!(pick_tag(&json!([]), 3), None);
    }

    #[test]
    fn matcher_rules() {
        let m = Matcher {
            role: Some(Role::Vqa),
            contains: vec!["Shape".into()],
            image_contains: vec!["round cookie".into()],
        };
        assert!(m.matches(Role::Vqa, "What is the shape?", Some(b"tag: round cookie")));
        assert!(!m.matches(Role::Llm, "What is the shape?", Some(b"tag: round cookie")));
        assert!(!m.matches(Role::Vqa, "What is the color?", Some(b"tag: round cookie")));
        assert!(!m.matches(Role::Vqa, "What is the shape?", None));
    }
}
