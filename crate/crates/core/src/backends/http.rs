//! OpenAI-compatible HTTP transport.
//!
//! Text and vision requests go to `<url>/chat/completions` with a
//! `json_schema` response format; images go to `<url>/images/generations`
//! with `response_format: b64_json`. Connection failures, timeouts, 429 and
//! 5xx responses are retriable; other 4xx responses are not.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};

use super::{BackendProfile, RenderRequest, RequestBody, ResponseSchema, Transport, TransportError};

pub struct HttpTransport {
    base_url: String,
    api_key: String,
    extra: serde_json::Map<String, Value>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(profile: &BackendProfile, base_url: &str, api_key: String) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(profile.request_timeout_secs))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpTransport {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            extra: profile.extra.clone(),
            client,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let url = format!("{}/{path}", self.base_url);
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| TransportError::Retriable(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| TransportError::Retriable(format!("{url}: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Retriable(format!("{url}: HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("{url}: HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Fatal(format!("{url}: bad JSON: {e}")))
    }
}

/// The json_schema sent to the server. Enumerated answers are wrapped in an
/// object because structured-output APIs require an object at the top.
pub(crate) fn wire_schema(schema: &ResponseSchema) -> Value {
    match schema {
        ResponseSchema::Enumerated { options } => json!({
            "type": "object",
            "properties": {"value": {"type": "string", "enum": options}},
            "required": ["value"],
            "additionalProperties": false
        }),
        ResponseSchema::Json { schema } => schema.clone(),
    }
}

pub(crate) fn chat_body(body: &RequestBody<'_>, image: Option<&[u8]>, extra: &serde_json::Map<String, Value>) -> Value {
    let mut content = vec![json!({"type": "text", "text": body.request.prompt_text})];
    if let Some(bytes) = image {
        let url = format!("data:image/png;base64,{}", BASE64.encode(bytes));
        content.push(json!({"type": "image_url", "image_url": {"url": url}}));
    }
    let mut out = json!({
        "model": body.model_name,
        "temperature": body.temperature,
        "max_tokens": body.max_tokens,
        "messages": [{"role": "user", "content": content}],
        "response_format": {
            "type": "json_schema",
            "json_schema": {"name": "response", "schema": wire_schema(&body.request.response_schema)}
        }
    });
    for (k, v) in extra {
        out[k] = v.clone();
    }
    out
}

/// Pulls the structured payload out of a chat completion. Content that is
/// not JSON is returned as a string so schema validation can reject it.
pub(crate) fn parse_chat(resp: &Value, schema: &ResponseSchema) -> Result<Value, TransportError> {
    let content = resp
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportError::Fatal(format!("no message content in {resp}")))?;
    let parsed = serde_json::from_str::<Value>(content).unwrap_or_else(|_| Value::String(content.to_string()));
    Ok(match (schema, parsed) {
        (ResponseSchema::Enumerated { .. }, Value::Object(mut m)) if m.contains_key("value") => {
            m.remove("value").unwrap()
        }
        (_, v) => v,
    })
}

impl Transport for HttpTransport {
    fn complete(&self, body: &RequestBody<'_>, _hash: &str, image: Option<&[u8]>) -> Result<Value, TransportError> {
        let resp = self.post("chat/completions", &chat_body(body, image, &self.extra))?;
        parse_chat(&resp, &body.request.response_schema)
    }

    fn render(&self, req: &RenderRequest<'_>) -> Result<Vec<u8>, TransportError> {
        let mut body = json!({
            "model": req.model_name,
            "prompt": req.prompt_text,
            "n": 1,
            "seed": req.seed,
            "response_format": "b64_json"
        });
        for (k, v) in &self.extra {
            body[k] = v.clone();
        }
        let resp = self.post("images/generations", &body)?;
        let b64 = resp
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| TransportError::Fatal("no data[0].b64_json in image response".into()))?;
        BASE64
            .decode(b64)
            .map_err(|e| TransportError::Fatal(format!("bad base64 image: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Role, StructuredRequest};

    #[test]
    fn chat_body_shape() {
        let req = StructuredRequest::text("Is it round?", ResponseSchema::enumerated(&["yes", "no"]));
        let body = RequestBody {
            role: Role::Vqa,
            model_name: "gpt-x",
            temperature: 0.0,
            max_tokens: 1000,
            request: &req,
        };
        let mut extra = serde_json::Map::new();
        extra.insert("seed".into(), json!(1));
        let v = chat_body(&body, Some(b"img"), &extra);
        assert_eq!(v["model"], "gpt-x");
        assert_eq!(v["max_tokens"], 1000);
        assert_eq!(v["seed"], 1);
        assert_eq!(
            v["messages"][0]["content"][1]["image_url"]["url"],
            "data:image/png;base64,aW1n"
        );
        assert_eq!(
            v["response_format"]["json_schema"]["schema"]["properties"]["value"]["enum"],
            json!(["yes", "no"])
        );
    }

    #[test]
    fn parse_unwraps_enumerations() {
        let resp = json!({"choices": [{"message": {"content": "{\"value\": \"yes\"}"}}]});
        assert_eq!(
            parse_chat(&resp, &ResponseSchema::enumerated(&["yes"])).unwrap(),
            json!("yes")
        );
        let free = json!({"choices": [{"message": {"content": "plain words"}}]});
        assert_eq!(
            parse_chat(&free, &ResponseSchema::Json { schema: json!({}) }).unwrap(),
            json!("plain words")
        );
        assert!(parse_chat(&json!({}), &ResponseSchema::enumerated(&["yes"])).is_err());
    }
}
