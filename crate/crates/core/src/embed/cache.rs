use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::read_jsonl;

/// Hex SHA-256 of already-normalized text.
pub fn cache_key(normalized_text: &str) -> String {
    hex::encode(Sha256::digest(normalized_text.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    dim: usize,
    vec: Vec<f32>,
}

/// Content-addressed vector store, optionally backed by an append-only
/// JSONL file. Repeated keys in the file resolve to the last record.
pub struct EmbeddingCache {
    entries: RwLock<HashMap<String, Vec<f32>>>,
    dim: RwLock<Option<usize>>,
    file: Option<(PathBuf, Mutex<BufWriter<File>>)>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            dim: RwLock::new(None),
            file: None,
        }
    }

    /// Loads `path` if it exists and appends subsequent inserts to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let mut dim = None;
        if path.exists() {
            crate::ingest::repair_jsonl_tail(&path)?;
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let records: Vec<CacheRecord> = read_jsonl(BufReader::new(f), "embedding cache record")?;
            for r in records {
                if r.vec.len() != r.dim {
                    return Err(Error::Integrity(format!("cache record {} declares dim {} but holds {}", r.key, r.dim, r.vec.len())));
                }
                match dim {
                    Some(d) if d != r.dim => {
                        return Err(Error::Config(format!("cache mixes dimensions {d} and {}", r.dim)));
                    }
                    _ => dim = Some(r.dim),
                }
                entries.insert(r.key, r.vec);
            }
        }
        let handle = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            entries: RwLock::new(entries),
            dim: RwLock::new(dim),
            file: Some((path, Mutex::new(BufWriter::new(handle)))),
        })
    }

    pub fn dim(&self) -> Option<usize> {
        *self.dim.read().unwrap()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Vec<f32>> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn get_text(&self, text: &str) -> Option<Vec<f32>> {
        self.get(&cache_key(&crate::ingest::normalize_text(text)))
    }

    pub fn insert(&self, key: String, vec: Vec<f32>) -> Result<()> {
        {
            let mut dim = self.dim.write().unwrap();
            match *dim {
                Some(d) if d != vec.len() => {
                    return Err(Error::Config(format!("cache dimension is {d}, got a {}-vector", vec.len())));
                }
                _ => *dim = Some(vec.len()),
            }
        }
        if let Some((path, writer)) = &self.file {
            let record = CacheRecord {
                key: key.clone(),
                dim: vec.len(),
                vec: vec.clone(),
            };
            let mut w = writer.lock().unwrap();
            serde_json::to_writer(&mut *w, &record).map_err(|e| Error::json("embedding cache record", e))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        self.entries.write().unwrap().insert(key, vec);
        Ok(())
    }

    /// Stores the vector for `text`, keyed by its normalized content.
    pub fn insert_text(&self, text: &str, vec: Vec<f32>) -> Result<()> {
        self.insert(cache_key(&crate::ingest::normalize_text(text)), vec)
    }

    pub fn flush(&self) -> Result<()> {
        if let Some((path, writer)) = &self.file {
            writer.lock().unwrap().flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

impl Drop for EmbeddingCache {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
