use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::util::sha256_fields;

/// Everything that determines a completion. Two requests share a cache entry
/// iff all four fields are equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub provider: String,
    pub model: String,
    pub temperature: f64,
    pub prompt_hash: String,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        let temperature = format!("{:016x}", self.temperature.to_bits());
        sha256_fields([
            self.provider.as_str(),
            self.model.as_str(),
            temperature.as_str(),
            self.prompt_hash.as_str(),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: CacheKey,
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

/// On-disk response store: `<dir>/<aa>/<digest>.json` plus a `.txt` sidecar
/// naming the note, strategy and model that first produced the entry.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, digest: &str, ext: &str) -> PathBuf {
        self.dir.join(&digest[..2]).join(format!("{digest}.{ext}"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheRecord>, GatewayError> {
        let path = self.path(&key.digest(), "json");
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        let record: CacheRecord = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        // a digest collision or a hand-edited file must not pass as a hit
        Ok((record.key == *key).then_some(record))
    }

    pub fn put(&self, record: &CacheRecord, sidecar: &str) -> Result<(), GatewayError> {
        let digest = record.key.digest();
        let body = serde_json::to_vec_pretty(record).expect("record serializes");
        write_atomic(&self.path(&digest, "json"), &body)?;
        write_atomic(&self.path(&digest, "txt"), sidecar.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GatewayError> {
    let fail = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", path.display()));
    let parent = path.parent().expect("cache paths have a parent");
    fs::create_dir_all(parent).map_err(fail)?;
    let tmp = parent.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut f = fs::File::create(&tmp).map_err(fail)?;
    f.write_all(bytes).map_err(fail)?;
    f.sync_all().map_err(fail)?;
    drop(f);
    fs::rename(&tmp, path).map_err(fail)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(t: f64) -> CacheKey {
        CacheKey {
            provider: "mock".into(),
            model: "m".into(),
            temperature: t,
            prompt_hash: "abc".into(),
        }
    }

    #[test]
    fn round_trip_and_key_sensitivity() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let rec = CacheRecord {
            key: key(0.0),
            raw_text: "CORRECT".into(),
            latency_ms: 5,
            attempts: 1,
        };
        assert!(cache.get(&key(0.0)).unwrap().is_none());
        cache.put(&rec, "note ms-test-1").unwrap();
        assert_eq!(cache.get(&key(0.0)).unwrap(), Some(rec));
        assert!(cache.get(&key(0.7)).unwrap().is_none());
        let mut other = key(0.0);
        other.prompt_hash = "abd".into();
        assert!(cache.get(&other).unwrap().is_none());
    }
}
