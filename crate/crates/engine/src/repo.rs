//! Content-addressed bundle repository on the local filesystem.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use sbpm_core::compile::{load_bundle, store_bundle, Bundle, BUNDLE_EXTENSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub hash: String,
    pub process_id: String,
    pub name: String,
    pub version: String,
    pub created_at: u64,
}

impl BundleInfo {
    fn of(b: &Bundle) -> Self {
        BundleInfo {
            hash: b.hash().to_string(),
            process_id: b.manifest.process_id.to_string(),
            name: b.manifest.name.clone(),
            version: b.manifest.version.clone(),
            created_at: b.manifest.created_at,
        }
    }
}

pub struct Repository {
    dir: PathBuf,
    cache: Mutex<HashMap<String, Arc<Bundle>>>,
}

impl Repository {
    pub fn open(dir: &Path) -> Result<Self, EngineError> {
        std::fs::create_dir_all(dir)?;
        let repo = Repository {
            dir: dir.to_path_buf(),
            cache: Mutex::new(HashMap::new()),
        };
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(BUNDLE_EXTENSION) {
                continue;
            }
            match load_bundle(&path) {
                Ok(b) => {
                    repo.cache.lock().insert(b.hash().to_string(), Arc::new(b));
                }
                Err(e) => tracing::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(repo)
    }

    fn path_of(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.{BUNDLE_EXTENSION}"))
    }

    /// Stores `bytes` if they are a valid bundle; idempotent by hash.
    pub fn deploy(&self, bytes: &[u8]) -> Result<Arc<Bundle>, EngineError> {
        let b = Bundle::from_bytes(bytes).map_err(|e| EngineError::CorruptBundle(e.to_string()))?;
        let hash = b.hash().to_string();
        let mut cache = self.cache.lock();
        if let Some(existing) = cache.get(&hash) {
            return Ok(existing.clone());
        }
        store_bundle(&b, &self.path_of(&hash)).map_err(|e| EngineError::Io(e.to_string()))?;
        let b = Arc::new(b);
        cache.insert(hash, b.clone());
        Ok(b)
    }

    pub fn get(&self, hash: &str) -> Option<Arc<Bundle>> {
        self.cache.lock().get(hash).cloned()
    }

    /// All bundles, sorted by name then hash.
    pub fn list(&self) -> Vec<BundleInfo> {
        let mut out: Vec<BundleInfo> = self.cache.lock().values().map(|b| BundleInfo::of(b)).collect();
        out.sort_by(|a, b| (&a.name, &a.hash).cmp(&(&b.name, &b.hash)));
        out
    }
}
