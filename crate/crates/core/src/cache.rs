//! Content-keyed caches shared by translation and compilation.
//!
//! Keys are digests over a tuple of key parts (see [`key_digest`]). Values
//! are opaque strings, typically JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

pub use crate::digest::key_digest;

pub trait Cache: Send + Sync {
    fn get(&self, key: &str) -> Option<String>;
    /// First writer wins; later puts for an existing key are ignored.
    fn put(&self, key: &str, value: String);
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    map: RwLock<BTreeMap<String, String>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Cache for MemoryCache {
    fn get(&self, key: &str) -> Option<String> {
        self.map.read().expect("cache lock").get(key).cloned()
    }

    fn put(&self, key: &str, value: String) {
        self.map
            .write()
            .expect("cache lock")
            .entry(key.to_string())
            .or_insert(value);
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format_version: u32,
    entries: BTreeMap<String, String>,
}

/// A [`MemoryCache`] persisted to a JSON file on [`FileCache::flush`].
#[derive(Debug)]
pub struct FileCache {
    path: PathBuf,
    memory: MemoryCache,
}

impl FileCache {
    /// Opens `path`, starting empty if it does not exist yet.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = match fs::read_to_string(&path) {
            Ok(text) => {
                let file: CacheFile = serde_json::from_str(&text)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                file.entries
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e),
        };
        Ok(Self {
            path,
            memory: MemoryCache {
                map: RwLock::new(entries),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }

    /// Writes to a temporary sibling then renames over the target.
    pub fn flush(&self) -> io::Result<()> {
        let file = CacheFile {
            format_version: crate::FORMAT_VERSION,
            entries: self.memory.map.read().expect("cache lock").clone(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(io::Error::other)?;
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let tmp = self.path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(tmp, &self.path)
    }
}

impl Cache for FileCache {
    fn get(&self, key: &str) -> Option<String> {
        self.memory.get(key)
    }

    fn put(&self, key: &str, value: String) {
        self.memory.put(key, value)
    }
}

/// Never stores anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCache;

impl Cache for NoCache {
    fn get(&self, _key: &str) -> Option<String> {
        None
    }

    fn put(&self, _key: &str, _value: String) {}
}
