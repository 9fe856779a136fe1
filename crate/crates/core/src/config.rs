//! Run configuration. Values come from command-line flags first, then the
//! JSON config file, then the defaults below.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{BackendProfile, Endpoint, Role};
use crate::error::{Error, Result};
use crate::model::read_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Named backend profiles.
    pub profiles: BTreeMap<String, BackendProfile>,
    /// Profile used for schema generation and caption filtering.
    pub llm: Option<String>,
    /// Profile used for answering questions about images.
    pub vqa: Option<String>,
    /// Image models to generate with.
    pub t2i: Vec<String>,

    pub n_concepts: usize,
    pub n_common: usize,
    pub n_uncommon: usize,
    pub n_attributes: usize,
    pub images_per_prompt: usize,
    pub base_seed: u64,

    pub tau: f64,
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Use (count + 1) / (N + 1) for permutation p-values.
    pub add_one: bool,

    pub caption_cap: usize,
    pub images_per_caption: usize,
    pub histogram_bins: usize,

    pub cache_dir: PathBuf,
    pub run_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profiles: BTreeMap::new(),
            llm: None,
            vqa: None,
            t2i: Vec::new(),
            n_concepts: 10,
            n_common: 3,
            n_uncommon: 3,
            n_attributes: 4,
            images_per_prompt: 100,
            base_seed: 0,
            tau: crate::metrics::DEFAULT_TAU,
            permutations: crate::stats::DEFAULT_PERMUTATIONS,
            alpha: crate::stats::DEFAULT_ALPHA,
            seed: 0,
            add_one: false,
            caption_cap: crate::caption_filter::DEFAULT_CAP,
            images_per_caption: crate::caption_filter::DEFAULT_IMAGES_PER_CAPTION,
            histogram_bins: 20,
            cache_dir: PathBuf::from("cache"),
            run_dir: PathBuf::from("runs"),
            templates_dir: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file; keys not present keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        for (key, profile) in cfg.profiles.iter_mut() {
            if profile.name.is_empty() {
                profile.name = key.clone();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("config: {m}")));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must be in (0, 1)");
        }
        if self.permutations == 0 {
            return bad("permutations must be positive");
        }
        if self.n_common + self.n_uncommon == 0 || self.n_attributes == 0 {
            return bad("need at least one prompt and one attribute per concept");
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be positive");
        }
        for p in self.profiles.values() {
            p.validate()?;
        }
        Ok(())
    }

    /// Resolves a backend reference for `role`.
    ///
    /// Accepted forms: a profile name from the config; `mock` or
    /// `mock:<fixtures.jsonl>` for the fixture backend; `dir:<path>` for
    /// pre-generated images.
    pub fn profile(&self, spec: &str, role: Role) -> Result<BackendProfile> {
        let profile = if let Some(p) = self.profiles.get(spec) {
            p.clone()
        } else if spec == "mock" {
            BackendProfile::mock(&format!("mock-{role}"), role, None)
        } else if let Some(path) = spec.strip_prefix("mock:") {
            let stem = Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or("mock");
            BackendProfile::mock(stem, role, Some(PathBuf::from(path)))
        } else if let Some(path) = spec.strip_prefix("dir:") {
            let name = Path::new(path).file_name().and_then(|s| s.to_str()).unwrap_or("images");
            BackendProfile::new(
                name,
                role,
                Endpoint::Directory {
                    path: PathBuf::from(path),
                },
                name,
            )
        } else {
            return Err(Error::Invalid(format!("unknown backend profile {spec:?}")));
        };
        if profile.role != role {
            return Err(Error::Invalid(format!(
                "profile {spec:?} serves {}, not {role}",
                profile.role
            )));
        }
        profile.validate()?;
        Ok(profile)
    }
}
