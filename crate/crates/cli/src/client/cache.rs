//! Persistent response cache.
//!
//! ```text
//! "PRCACHE1" | record*
//! record = [u8;32] key | u64 created_at (unix seconds) | u32 len | len bytes UTF-8
//! ```
//! Integers are little-endian. Records are only ever appended; the first
//! record for a key wins. A torn trailing record (from a crash mid-write) is
//! dropped when the file is next opened.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

pub const CACHE_MAGIC: &[u8; 8] = b"PRCACHE1";
const RECORD_HEADER: usize = 32 + 8 + 4;

pub type CacheKey = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub response: Arc<str>,
    pub created_at: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cache file {path} is not a response cache")]
    BadMagic { path: PathBuf },
    #[error("cache file {path} holds a non-UTF-8 response at offset {offset}")]
    Encoding { path: PathBuf, offset: u64 },
}

/// Content-addressed store of completions. Reads go through an in-memory
/// index; writes are serialized through one file handle.
#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    index: RwLock<HashMap<CacheKey, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Parses as many whole records as `bytes` holds, returning them and the
/// length of that prefix.
fn parse_records(path: &Path, bytes: &[u8]) -> Result<(Vec<CacheEntry>, usize), CacheError> {
    let mut out = Vec::new();
    let mut pos = CACHE_MAGIC.len();
    while bytes.len() - pos >= RECORD_HEADER {
        let key: CacheKey = bytes[pos..pos + 32].try_into().expect("32 bytes");
        let created_at = u64::from_le_bytes(bytes[pos + 32..pos + 40].try_into().expect("8 bytes"));
        let len = u32::from_le_bytes(bytes[pos + 40..pos + 44].try_into().expect("4 bytes")) as usize;
        let start = pos + RECORD_HEADER;
        if bytes.len() - start < len {
            break;
        }
        let text = std::str::from_utf8(&bytes[start..start + len])
            .map_err(|_| CacheError::Encoding { path: path.to_path_buf(), offset: pos as u64 })?;
        out.push(CacheEntry { key, response: Arc::from(text), created_at });
        pos = start + len;
    }
    Ok((out, pos))
}

impl ResponseCache {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self { path: None, index: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Opens or creates the cache file at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let path = path.into();
        let io_err = |source| CacheError::Io { path: path.clone(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path).map_err(io_err)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err)?;
        let mut index = HashMap::new();
        if bytes.is_empty() {
            file.write_all(CACHE_MAGIC).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        } else {
            if bytes.len() < CACHE_MAGIC.len() || &bytes[..CACHE_MAGIC.len()] != CACHE_MAGIC {
                return Err(CacheError::BadMagic { path });
            }
            let (entries, valid) = parse_records(&path, &bytes)?;
            if valid < bytes.len() {
                file.set_len(valid as u64).map_err(io_err)?;
                file.seek(SeekFrom::End(0)).map_err(io_err)?;
            }
            for e in entries {
                index.entry(e.key).or_insert(e);
            }
        }
        Ok(Self { path: Some(path), index: RwLock::new(index), writer: Mutex::new(Some(file)) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<str>> {
        self.index.read().expect("cache index poisoned").get(key).map(|e| e.response.clone())
    }

    pub fn entry(&self, key: &CacheKey) -> Option<CacheEntry> {
        self.index.read().expect("cache index poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persists every new entry, then makes them visible. Keys already
    /// present keep their original response. Returns how many were new.
    pub fn insert_many(&self, entries: &[(CacheKey, &str)]) -> Result<usize, CacheError> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        let mut fresh: Vec<CacheEntry> = Vec::new();
        {
            let index = self.index.read().expect("cache index poisoned");
            for &(key, text) in entries {
                if !index.contains_key(&key) && !fresh.iter().any(|e| e.key == key) {
                    fresh.push(CacheEntry { key, response: Arc::from(text), created_at: now() });
                }
            }
        }
        if fresh.is_empty() {
            return Ok(0);
        }
        if let (Some(file), Some(path)) = (writer.as_mut(), self.path.as_ref()) {
            let mut buf = Vec::new();
            for e in &fresh {
                buf.extend_from_slice(&e.key);
                buf.extend_from_slice(&e.created_at.to_le_bytes());
                buf.extend_from_slice(&(e.response.len() as u32).to_le_bytes());
                buf.extend_from_slice(e.response.as_bytes());
            }
            let io_err = |source| CacheError::Io { path: path.clone(), source };
            file.write_all(&buf).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        }
        let n = fresh.len();
        let mut index = self.index.write().expect("cache index poisoned");
        for e in fresh {
            index.insert(e.key, e);
        }
        Ok(n)
    }

    pub fn insert(&self, key: CacheKey, response: &str) -> Result<bool, CacheError> {
        Ok(self.insert_many(&[(key, response)])? == 1)
    }

    /// All keys, sorted.
    pub fn keys(&self) -> Vec<CacheKey> {
        let mut keys: Vec<_> = self.index.read().expect("cache index poisoned").keys().copied().collect();
        keys.sort_unstable();
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(i: u8) -> CacheKey {
        [i; 32]
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let c = ResponseCache::open(&path).unwrap();
        assert!(c.insert(key(1), "Yes.").unwrap());
        assert!(!c.insert(key(1), "No.").unwrap());
        c.insert(key(2), "héllo").unwrap();
        drop(c);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(&*c.get(&key(1)).unwrap(), "Yes.");
        assert_eq!(&*c.get(&key(2)).unwrap(), "héllo");
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let c = ResponseCache::open(&path).unwrap();
        c.insert(key(1), "first").unwrap();
        c.insert(key(2), "second").unwrap();
        drop(c);
        let full = std::fs::metadata(&path).unwrap().len();
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(full - 3).unwrap();
        drop(f);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        c.insert(key(3), "third").unwrap();
        drop(c);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.keys(), vec![key(1), key(3)]);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        std::fs::write(&path, b"not a cache at all").unwrap();
        assert!(matches!(ResponseCache::open(&path), Err(CacheError::BadMagic { .. })));
    }

    #[test]
    fn layout_is_fixed_width_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let c = ResponseCache::open(&path).unwrap();
        c.insert(key(7), "ab").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], CACHE_MAGIC);
        assert_eq!(&bytes[8..40], &[7u8; 32]);
        assert_eq!(&bytes[48..52], &2u32.to_le_bytes());
        assert_eq!(&bytes[52..], b"ab");
        assert_eq!(bytes.len(), 8 + RECORD_HEADER + 2);
    }
}
