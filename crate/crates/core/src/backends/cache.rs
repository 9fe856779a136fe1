//! Content-addressed response cache.
//!
//! Layout: `<root>/<role>/<first two hex chars>/<hash>.json`. Entries are
//! written to a temporary file and renamed into place, so readers never see
//! a partial entry; concurrent writers of the same key write the same content.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_hash: String,
    pub response: Value,
    /// Seconds since the epoch at insertion.
    pub timestamp: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache {
            root: root.into(),
            tmp_counter: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, role: Role, hash: &str) -> PathBuf {
        let prefix = hash.get(..2).unwrap_or("__");
        self.root
            .join(role.to_string())
            .join(prefix)
            .join(format!("{hash}.json"))
    }

    pub fn get(&self, role: Role, hash: &str) -> Option<CacheEntry> {
        let path = self.path_for(role, hash);
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) if entry.request_hash == hash => Some(entry),
            _ => {
                log::warn!("ignoring corrupt cache entry {}", path.display());
                None
            }
        }
    }

    pub fn put(&self, role: Role, hash: &str, response: &Value) -> Result<(), BackendError> {
        let path = self.path_for(role, hash);
        let dir = path.parent().expect("cache path has a parent");
        let err = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(dir).map_err(err)?;
        let entry = CacheEntry {
            request_hash: hash.to_string(),
            response: response.clone(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let tmp = dir.join(format!(
            ".{hash}.{}.{}.tmp",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let bytes = serde_json::to_vec_pretty(&entry).expect("cache entries serialize");
        fs::write(&tmp, bytes).map_err(err)?;
        fs::rename(&tmp, &path).map_err(err)
    }
}
