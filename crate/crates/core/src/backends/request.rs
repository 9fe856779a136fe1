use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::profile::Role;

/// Shape a response must have.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseSchema {
    /// The response is a single string drawn from `options`.
    Enumerated { options: Vec<String> },
    /// The response is JSON matching a subset of JSON Schema
    /// (`type`, `properties`, `required`, `items`, `enum`, `minItems`).
    Json { schema: Value },
}

impl ResponseSchema {
    pub fn enumerated<S: AsRef<str>>(options: &[S]) -> Self {
        ResponseSchema::Enumerated {
            options: options.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    /// Checks `response`, returning the canonical value on success. Enumerated
    /// answers are matched case- and whitespace-insensitively and returned in
    /// their canonical spelling.
    pub fn validate(&self, response: &Value) -> Result<Value, String> {
        match self {
            ResponseSchema::Enumerated { options } => {
                if options.is_empty() {
                    return Err("enumerated schema has no options".into());
                }
                let raw = match response {
                    Value::String(s) => s.as_str(),
                    Value::Object(m) => match m.get("value") {
                        Some(Value::String(s)) => s.as_str(),
                        _ => return Err(format!("expected one of {options:?}, got {response}")),
                    },
                    _ => return Err(format!("expected one of {options:?}, got {response}")),
                };
                let norm = crate::model::normalize_value(raw);
                options
                    .iter()
                    .find(|o| crate::model::normalize_value(o) == norm)
                    .map(|o| Value::String(o.clone()))
                    .ok_or_else(|| format!("{raw:?} is not one of {options:?}"))
            }
            ResponseSchema::Json { schema } => {
                validate_json(response, schema, "$")?;
                Ok(response.clone())
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ResponseSchema::Enumerated { options } => format!(
                "exactly one of: {}",
                options
                    .iter()
                    .map(|o| format!("\"{o}\""))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            ResponseSchema::Json { schema } => format!("JSON matching this schema: {schema}"),
        }
    }
}

fn type_matches(value: &Value, ty: &str) -> bool {
    match ty {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.is_i64() || value.is_u64(),
        "boolean" => value.is_boolean(),
        "null" => value.is_null(),
        _ => true,
    }
}

fn validate_json(value: &Value, schema: &Value, path: &str) -> Result<(), String> {
    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
        if !type_matches(value, ty) {
            return Err(format!("{path}: expected {ty}, got {value}"));
        }
    }
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(value) {
            return Err(format!("{path}: {value} not in enum"));
        }
    }
    if let (Some(obj), Some(required)) = (value.as_object(), schema.get("required").and_then(Value::as_array)) {
        for key in required.iter().filter_map(Value::as_str) {
            if !obj.contains_key(key) {
                return Err(format!("{path}: missing required key {key:?}"));
            }
        }
    }
    if let (Some(obj), Some(props)) = (value.as_object(), schema.get("properties").and_then(Value::as_object)) {
        for (key, sub) in props {
            if let Some(v) = obj.get(key) {
                validate_json(v, sub, &format!("{path}.{key}"))?;
            }
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                return Err(format!("{path}: expected at least {min} items"));
            }
        }
        if let Some(item_schema) = schema.get("items") {
            for (i, item) in items.iter().enumerate() {
                validate_json(item, item_schema, &format!("{path}[{i}]"))?;
            }
        }
    }
    Ok(())
}

/// Reference to an image attached to a request. Only the hash enters the
/// request hash; bytes are read at send time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub uri: String,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredRequest {
    pub prompt_text: String,
    pub image: Option<ImageRef>,
    pub response_schema: ResponseSchema,
}

impl StructuredRequest {
    pub fn text(prompt_text: impl Into<String>, response_schema: ResponseSchema) -> Self {
        StructuredRequest {
            prompt_text: prompt_text.into(),
            image: None,
            response_schema,
        }
    }

    /// Same request with the schema spelled out at the end of the prompt.
    pub fn corrective(&self) -> Self {
        let mut out = self.clone();
        out.prompt_text = format!(
            "{}\n\nYour previous reply did not match the required format. Reply with {} and nothing else.",
            self.prompt_text,
            self.response_schema.describe()
        );
        out
    }
}

/// Everything that determines a response. Serialized, it is both the cache
/// key preimage and what transports receive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestBody<'a> {
    pub role: Role,
    pub model_name: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(flatten)]
    pub request: &'a StructuredRequest,
}

impl RequestBody<'_> {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request bodies serialize");
        hex::encode(Sha256::digest(bytes))
    }
}
