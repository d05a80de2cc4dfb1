//! Content-addressed response cache.
//!
//! Entries live at `<dir>/<sha256 of key>.json`. Reads need no locking;
//! writes are serialized and land through a temp file plus rename so a
//! concurrent reader never sees a partial entry.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::Value;

use super::sha256_hex;
use crate::error::{Error, Result};

pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(parts: &[&str]) -> String {
        sha256_hex(parts.join("\n").as_bytes())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key: &str, value: &Value) -> Result<()> {
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        let path = self.path(key);
        let tmp = self.dir.join(format!(".{key}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path().join("c")).unwrap();
        let key = ResponseCache::key(&["model", "{}"]);
        assert!(cache.get(&key).is_none());
        cache.put(&key, &serde_json::json!({"a": 1})).unwrap();
        assert_eq!(cache.get(&key).unwrap()["a"], 1);
        assert_ne!(key, ResponseCache::key(&["model", "{ }"]));
    }
}
