//! Clients for the three external model roles: a text LLM, a vision
//! question-answering model and a text-to-image generator.
//!
//! A [`Client`] wraps one [`BackendProfile`] and a [`Transport`] (mock, HTTP,
//! or none for directory-backed image sets) and adds the response cache,
//! retries, rate limiting and response validation. Clients are `Sync` and are
//! meant to be shared across worker threads.

mod cache;
mod http;
mod mock;
mod profile;
mod ratelimit;
mod request;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use cache::{CacheEntry, ResponseCache};
pub use http::HttpTransport;
pub use mock::{mock_image_bytes, Fixture, Matcher, MockTransport};
pub use profile::{BackendProfile, Endpoint, RateLimit, Role};
pub use ratelimit::TokenBucket;
pub use request::{ImageRef, RequestBody, ResponseSchema, StructuredRequest};

use crate::model::{
    content_hash, is_sentinel, normalize_value, AnswerRecord, AttributeQuestion, Concept, ImageRecord, Prompt,
    SupportSet, NONE_OF_THE_ABOVE,
};
use crate::templates::{render, Templates};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{role} backend failed after {attempts} attempts: {message}")]
    Retriable { role: Role, attempts: u32, message: String },
    #[error("backend error: {0}")]
    Fatal(String),
    #[error("response does not match the requested schema after a corrective retry: {0}")]
    SchemaInvalid(String),
    #[error("profile {profile} has role {actual}, expected {expected}")]
    WrongRole {
        profile: String,
        expected: Role,
        actual: Role,
    },
    #[error("API key variable {0} is not set")]
    MissingApiKey(String),
    #[error("image {uri} is unreadable: {message}")]
    ImageUnreadable { uri: String, message: String },
    #[error("prompt {prompt_id}: {requested} images requested but only {available} found ({missing} missing)")]
    Shortfall {
        prompt_id: String,
        requested: usize,
        available: usize,
        missing: usize,
    },
    #[error("cache: {0}")]
    Cache(String),
    #[error("{0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Retriable { .. })
    }
}

#[derive(Debug)]
pub enum TransportError {
    Retriable(String),
    Fatal(String),
}

/// Image generation request handed to a transport.
#[derive(Debug, Clone, Copy)]
pub struct RenderRequest<'a> {
    pub model_name: &'a str,
    pub prompt_id: &'a str,
    pub prompt_text: &'a str,
    pub seed: u64,
}

/// Wire-level access to a model. Implementations perform exactly one call
/// per invocation; caching and retries live in [`Client`].
pub trait Transport: Send + Sync {
    fn complete(&self, body: &RequestBody<'_>, hash: &str, image: Option<&[u8]>) -> Result<Value, TransportError>;

    fn render(&self, req: &RenderRequest<'_>) -> Result<Vec<u8>, TransportError> {
        let _ = req;
        Err(TransportError::Fatal("this backend cannot generate images".into()))
    }
}

/// Counters for one client, used to verify cache behavior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    /// Transport invocations, including retries.
    pub backend_calls: usize,
    pub cache_hits: usize,
}

pub struct Client {
    profile: BackendProfile,
    transport: Option<Arc<dyn Transport>>,
    cache: Option<ResponseCache>,
    limiter: Option<TokenBucket>,
    backend_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("profile", &self.profile.name)
            .field("cache", &self.cache.as_ref().map(|c| c.root().to_path_buf()))
            .finish()
    }
}

impl Client {
    /// Builds the transport named by the profile's endpoint. Live profiles
    /// need their API key variable set.
    pub fn from_profile(profile: BackendProfile, cache_dir: Option<&Path>) -> Result<Self, BackendError> {
        profile.validate()?;
        let transport: Option<Arc<dyn Transport>> = match &profile.endpoint {
            Endpoint::Mock { fixtures } => {
                let mock = match fixtures {
                    Some(path) => MockTransport::load(path).map_err(|e| BackendError::Config(e.to_string()))?,
                    None => MockTransport::default(),
                };
                Some(Arc::new(mock))
            }
            Endpoint::Http { url } => {
                let var = profile.api_key_var();
                let key = std::env::var(&var).map_err(|_| BackendError::MissingApiKey(var))?;
                Some(Arc::new(
                    HttpTransport::new(&profile, url, key).map_err(BackendError::Config)?,
                ))
            }
            Endpoint::Directory { .. } => None,
        };
        Ok(Self::assemble(profile, transport, cache_dir))
    }

    /// Client over a caller-supplied transport.
    pub fn with_transport(profile: BackendProfile, transport: Arc<dyn Transport>, cache_dir: Option<&Path>) -> Self {
        Self::assemble(profile, Some(transport), cache_dir)
    }

    fn assemble(profile: BackendProfile, transport: Option<Arc<dyn Transport>>, cache_dir: Option<&Path>) -> Self {
        Client {
            limiter: profile.rate_limit.map(TokenBucket::new),
            cache: cache_dir.map(ResponseCache::new),
            profile,
            transport,
            backend_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    fn expect_role(&self, role: Role) -> Result<(), BackendError> {
        if self.profile.role != role {
            return Err(BackendError::WrongRole {
                profile: self.profile.name.clone(),
                expected: role,
                actual: self.profile.role,
            });
        }
        Ok(())
    }

    fn transport(&self) -> Result<&Arc<dyn Transport>, BackendError> {
        self.transport
            .as_ref()
            .ok_or_else(|| BackendError::Config(format!("profile {} has no request transport", self.profile.name)))
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, TransportError>) -> Result<T, BackendError> {
        let attempts = self.profile.max_retries.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match call() {
                Ok(v) => return Ok(v),
                Err(TransportError::Fatal(m)) => return Err(BackendError::Fatal(m)),
                Err(TransportError::Retriable(m)) => {
                    log::warn!("{} attempt {attempt}/{attempts} failed: {m}", self.profile.name);
                    last = m;
                    if attempt < attempts && self.profile.retry_backoff_ms > 0 {
                        let backoff = self.profile.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(6));
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        Err(BackendError::Retriable {
            role: self.profile.role,
            attempts,
            message: last,
        })
    }

    fn body<'a>(&'a self, req: &'a StructuredRequest) -> RequestBody<'a> {
        RequestBody {
            role: self.profile.role,
            model_name: &self.profile.model_name,
            temperature: self.profile.temperature,
            max_tokens: self.profile.max_tokens,
            request: req,
        }
    }

    fn cached(&self, hash: &str) -> Option<Value> {
        let entry = self.cache.as_ref()?.get(self.profile.role, hash)?;
        self.cache_hits.fetch_add(1, Ordering::SeqCst);
        Some(entry.response)
    }

    fn store(&self, hash: &str, value: &Value) -> Result<(), BackendError> {
        match &self.cache {
            Some(cache) => cache.put(self.profile.role, hash, value),
            None => Ok(()),
        }
    }

    /// Sends a structured request regardless of role: cache lookup, retries,
    /// validation, and one corrective retry on a schema mismatch.
    pub fn complete(&self, req: &StructuredRequest, image: Option<&[u8]>) -> Result<Value, BackendError> {
        if let ResponseSchema::Enumerated { options } = &req.response_schema {
            if options.is_empty() {
                return Err(BackendError::Config("enumerated response schema has no options".into()));
            }
        }
        let hash = self.body(req).hash();
        if let Some(v) = self.cached(&hash) {
            return Ok(v);
        }
        let transport = self.transport()?;
        let first = self.with_retries(|| transport.complete(&self.body(req), &hash, image))?;
        if let Ok(valid) = req.response_schema.validate(&first) {
            self.store(&hash, &valid)?;
            return Ok(valid);
        }

        let corrective = req.corrective();
        let corrective_hash = self.body(&corrective).hash();
        let second = match self.cached(&corrective_hash) {
            Some(v) => v,
            None => self.with_retries(|| transport.complete(&self.body(&corrective), &corrective_hash, image))?,
        };
        match req.response_schema.validate(&second) {
            Ok(valid) => {
                // keyed under the original request too, so reruns hit directly
                self.store(&corrective_hash, &valid)?;
                self.store(&hash, &valid)?;
                Ok(valid)
            }
            Err(reason) => Err(BackendError::SchemaInvalid(reason)),
        }
    }

    /// Text completion against an LLM profile.
    pub fn llm_complete(&self, req: &StructuredRequest) -> Result<Value, BackendError> {
        self.expect_role(Role::Llm)?;
        self.complete(req, None)
    }

    /// Asks the vision model `question` about `image` and maps the answer
    /// into `support` or the sentinel.
    ///
    /// The model is asked for a free-form answer and a chosen option in one
    /// request. When it omits the option, the answer is matched literally
    /// against the support, and failing that, a second request maps it.
    pub fn vqa_answer(
        &self,
        image: &ImageRecord,
        concept: &Concept,
        question: &AttributeQuestion,
        support: &SupportSet,
        templates: &Templates,
    ) -> Result<AnswerRecord, BackendError> {
        self.expect_role(Role::Vqa)?;
        let bytes = read_image(&image.uri)?;
        let hash = content_hash(&bytes);
        if !image.content_hash.is_empty() && image.content_hash != hash {
            log::warn!("image {} changed on disk since it was recorded", image.id);
        }
        let options = support.options();
        let options_text = options
            .iter()
            .map(|o| format!("\"{o}\""))
            .collect::<Vec<_>>()
            .join(", ");
        let req = StructuredRequest {
            prompt_text: render(
                &templates.answer,
                &[
                    ("question", &question.question_text),
                    ("concept", &concept.name),
                    ("options", &options_text),
                ],
            ),
            image: Some(ImageRef {
                uri: image.uri.clone(),
                content_hash: hash,
            }),
            response_schema: ResponseSchema::Json {
                schema: json!({
                    "type": "object",
                    "required": ["answer"],
                    "properties": {
                        "answer": {"type": "string"},
                        "value": {"type": "string", "enum": options}
                    }
                }),
            },
        };
        let response = self.complete(&req, Some(&bytes))?;
        let raw_answer = response["answer"].as_str().unwrap_or_default().to_string();

        let mapped_value = match response.get("value").and_then(Value::as_str) {
            Some(v) => v.to_string(),
            None => self.map_answer(&raw_answer, question, support, templates)?,
        };
        Ok(AnswerRecord {
            image_id: image.id.clone(),
            question_id: question.id.clone(),
            prompt_id: image.prompt_id.clone(),
            model_id: image.model_id.clone(),
            raw_answer,
            mapped_value,
        })
    }

    fn map_answer(
        &self,
        raw: &str,
        question: &AttributeQuestion,
        support: &SupportSet,
        templates: &Templates,
    ) -> Result<String, BackendError> {
        let norm = normalize_value(raw);
        if let Some(v) = support.values.iter().find(|v| **v == norm) {
            return Ok(v.clone());
        }
        if norm.is_empty() || is_sentinel(&norm) {
            return Ok(NONE_OF_THE_ABOVE.to_string());
        }
        let options = support.options();
        let options_text = options
            .iter()
            .map(|o| format!("\"{o}\""))
            .collect::<Vec<_>>()
            .join(", ");
        let req = StructuredRequest::text(
            render(
                &templates.answer_mapping,
                &[
                    ("question", &question.question_text),
                    ("answer", raw),
                    ("options", &options_text),
                ],
            ),
            ResponseSchema::Enumerated { options },
        );
        let v = self.complete(&req, None)?;
        Ok(v.as_str().unwrap_or(NONE_OF_THE_ABOVE).to_string())
    }

    /// Produces `n` images of `prompt` with seeds `base_seed..base_seed + n`.
    ///
    /// Generating backends write `<out_root>/<model>/<concept>/<prompt>/<seed>.png`
    /// and reuse files already present. Directory backends pair existing
    /// files from the profile's directory without generating anything.
    pub fn generate_images(
        &self,
        prompt: &Prompt,
        n: usize,
        base_seed: u64,
        out_root: &Path,
    ) -> Result<Vec<ImageRecord>, BackendError> {
        self.expect_role(Role::T2i)?;
        if let Endpoint::Directory { path } = &self.profile.endpoint {
            return pair_directory(path, &self.profile.model_name, prompt, n, base_seed);
        }
        let transport = self.transport()?;
        let model = &self.profile.model_name;
        let dir = out_root.join(model).join(&prompt.concept_id).join(&prompt.id);
        fs::create_dir_all(&dir).map_err(|e| BackendError::Config(format!("{}: {e}", dir.display())))?;

        let work = |seed: u64| -> Result<ImageRecord, BackendError> {
            let path = dir.join(format!("{seed}.png"));
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(_) => {
                    let req = RenderRequest {
                        model_name: model,
                        prompt_id: &prompt.id,
                        prompt_text: &prompt.text,
                        seed,
                    };
                    let bytes = self.with_retries(|| transport.render(&req))?;
                    write_atomic(&path, &bytes)?;
                    bytes
                }
            };
            Ok(ImageRecord {
                id: ImageRecord::image_id(model, &prompt.id, seed),
                prompt_id: prompt.id.clone(),
                model_id: model.clone(),
                seed,
                uri: path.to_string_lossy().into_owned(),
                content_hash: content_hash(&bytes),
            })
        };
        let seeds: Vec<u64> = (0..n as u64).map(|i| base_seed + i).collect();
        bounded(self.profile.batch_size, || seeds.par_iter().map(|&s| work(s)).collect())
    }
}

/// Runs `f` on a dedicated pool of at most `threads` workers.
pub(crate) fn bounded<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BackendError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let err = |e: std::io::Error| BackendError::Config(format!("{}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

/// Reads image bytes from a local path or `file://` URI.
pub fn read_image(uri: &str) -> Result<Vec<u8>, BackendError> {
    let path = uri.strip_prefix("file://").unwrap_or(uri);
    fs::read(path).map_err(|e| BackendError::ImageUnreadable {
        uri: uri.to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Deserialize)]
struct ManifestLine {
    prompt_id: String,
    #[serde(alias = "uri", alias = "path")]
    file: String,
}

/// Lists pre-generated files for `prompt` under `dir`: entries of
/// `dir/manifest.jsonl` in file order, or else the sorted contents of
/// `dir/<prompt_id>/`.
fn directory_files(dir: &Path, prompt_id: &str) -> Result<Vec<PathBuf>, BackendError> {
    let manifest = dir.join("manifest.jsonl");
    if manifest.exists() {
        let lines: Vec<ManifestLine> =
            crate::model::read_jsonl(&manifest).map_err(|e| BackendError::Config(e.to_string()))?;
        return Ok(lines
            .into_iter()
            .filter(|l| l.prompt_id == prompt_id)
            .map(|l| {
                let p = PathBuf::from(&l.file);
                if p.is_absolute() {
                    p
                } else {
                    dir.join(p)
                }
            })
            .collect());
    }
    let sub = dir.join(prompt_id);
    let mut files: Vec<PathBuf> = match fs::read_dir(&sub) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    Ok(files)
}

fn pair_directory(
    dir: &Path,
    model: &str,
    prompt: &Prompt,
    n: usize,
    base_seed: u64,
) -> Result<Vec<ImageRecord>, BackendError> {
    let files = directory_files(dir, &prompt.id)?;
    if files.len() < n {
        return Err(BackendError::Shortfall {
            prompt_id: prompt.id.clone(),
            requested: n,
            available: files.len(),
            missing: n - files.len(),
        });
    }
    files
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, path)| {
            let uri = path.to_string_lossy().into_owned();
            let bytes = read_image(&uri)?;
            let seed = base_seed + i as u64;
            Ok(ImageRecord {
                id: ImageRecord::image_id(model, &prompt.id, seed),
                prompt_id: prompt.id.clone(),
                model_id: model.to_string(),
                seed,
                uri,
                content_hash: content_hash(&bytes),
            })
        })
        .collect()
}
