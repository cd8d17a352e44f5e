use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use dashmap::DashMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("revision conflict on {key}: expected {expected:?}, current {current:?}")]
    Conflict {
        key: String,
        expected: Option<u64>,
        current: Option<u64>,
    },
    #[error("invalid key component `{0}`")]
    InvalidKey(String),
    #[error("store I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

/// A stored JSON document with its revision. Revisions start at 1 and grow
/// by one per committed write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord<T = Value> {
    pub key: String,
    pub revision: u64,
    pub document: T,
}

/// Single-node document store. Each record is one file; writes go to a
/// temporary file that is synced and renamed over the target, so readers
/// only ever see committed revisions. Writers to the same key serialize on a
/// per-key lock; different keys never contend.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
    locks: Arc<DashMap<String, Arc<Mutex<()>>>>,
    tmp_counter: Arc<AtomicU64>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_component(s: &str) -> Result<(), StoreError> {
    let ok = !s.is_empty()
        && s.len() <= 128
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
        && !s.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidKey(s.to_string()))
    }
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(Self {
            root,
            locks: Arc::new(DashMap::new()),
            tmp_counter: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Directory holding raw blobs of `kind`.
    pub fn blob_dir(&self, kind: &str) -> PathBuf {
        self.root.join(kind)
    }

    fn path(&self, kind: &str, id: &str) -> Result<PathBuf, StoreError> {
        check_component(kind)?;
        check_component(id)?;
        Ok(self.root.join(kind).join(format!("{id}.json")))
    }

    fn lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.locks.entry(key.to_string()).or_default().clone()
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let dir = path.parent().expect("record paths have a parent");
        fs::create_dir_all(dir).map_err(io(dir))?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        let result = (|| {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)?;
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
            Ok(())
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result.map_err(io(path))
    }

    fn read_path<T: DeserializeOwned>(&self, path: &Path) -> Result<Option<StoreRecord<T>>, StoreError> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(path)(e)),
        }
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, id: &str) -> Result<Option<StoreRecord<T>>, StoreError> {
        self.read_path(&self.path(kind, id)?)
    }

    /// Compare-and-set write. `expected` is the current revision, or `None`
    /// when the record must not exist yet. Returns the new revision.
    pub fn put<T: Serialize>(&self, kind: &str, id: &str, expected: Option<u64>, document: &T) -> Result<u64, StoreError> {
        let path = self.path(kind, id)?;
        let key = format!("{kind}/{id}");
        let lock = self.lock(&key);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let current = self.read_path::<Value>(&path)?.map(|r| r.revision);
        if current != expected {
            return Err(StoreError::Conflict { key, expected, current });
        }
        let revision = current.unwrap_or(0) + 1;
        let record = StoreRecord {
            key,
            revision,
            document,
        };
        let bytes = serde_json::to_vec_pretty(&record).expect("documents serialize");
        self.write_atomic(&path, &bytes)?;
        Ok(revision)
    }

    /// Read-modify-write under the key lock. `f` receives the current
    /// document (if any) and returns the replacement, or an error to abort.
    pub fn update<T, E, F>(&self, kind: &str, id: &str, f: F) -> Result<Result<(u64, T), E>, StoreError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(Option<T>) -> Result<T, E>,
    {
        let path = self.path(kind, id)?;
        let key = format!("{kind}/{id}");
        let lock = self.lock(&key);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let current = self.read_path::<T>(&path)?;
        let revision = current.as_ref().map_or(0, |r| r.revision) + 1;
        let next = match f(current.map(|r| r.document)) {
            Ok(doc) => doc,
            Err(e) => return Ok(Err(e)),
        };
        let record = StoreRecord {
            key,
            revision,
            document: &next,
        };
        let bytes = serde_json::to_vec_pretty(&record).expect("documents serialize");
        self.write_atomic(&path, &bytes)?;
        Ok(Ok((revision, next)))
    }

    /// Ids of all committed records of `kind`, sorted.
    pub fn list(&self, kind: &str) -> Result<Vec<String>, StoreError> {
        check_component(kind)?;
        let dir = self.root.join(kind);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(&dir)(e)),
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_string))
            .filter(|n| !n.starts_with('.'))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Stores an immutable blob under its SHA-256 and returns the hex digest.
    pub fn put_blob(&self, kind: &str, bytes: &[u8]) -> Result<String, StoreError> {
        check_component(kind)?;
        let hex = hex::encode(Sha256::digest(bytes));
        let path = self.root.join(kind).join(&hex);
        if !path.is_file() {
            self.write_atomic(&path, bytes)?;
        }
        Ok(hex)
    }

    pub fn get_blob(&self, kind: &str, hex: &str) -> Result<Option<Vec<u8>>, StoreError> {
        check_component(kind)?;
        if hex.len() != 64 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(StoreError::InvalidKey(hex.to_string()));
        }
        let path = self.root.join(kind).join(hex.to_ascii_lowercase());
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }
}
