//! The image repository: a single-file JSON-Lines store of indexed images.
//!
//! The store file is an append log. Each line is one [`ImageEntry`]; a later
//! line with the same id replaces an earlier one. [`Repository::compact`]
//! rewrites the file sorted by id with one line per entry, which is also the
//! exact format produced by [`Snapshot::export_jsonl`].
//!
//! There is one writer per store, enforced with an advisory lock on a
//! sidecar `.lock` file. Readers load a [`Snapshot`], which never includes a
//! trailing line that is still being written.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::SystemTime;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::imaging::Signature;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("store {0} is already open for writing by another process")]
    Locked(PathBuf),
    #[error("domain {0:?} has no entries")]
    EmptyDomain(String),
    #[error("invalid relevance range [{min}, {max}]")]
    InvalidRange { min: f64, max: f64 },
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub image_url: Url,
    pub page_url: Url,
    pub domain: String,
    pub relevance: f64,
    pub signature: Signature,
    pub indexed_at: DateTime<Utc>,
    /// SHA-256 of the image bytes when a copy sits in the thumbnail cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_sha256: Option<String>,
}

impl ImageEntry {
    pub fn new(image_url: Url, page_url: Url, domain: impl Into<String>, relevance: f64, signature: Signature) -> Self {
        let domain = domain.into();
        ImageEntry {
            id: entry_id(&image_url, &page_url, &domain),
            image_url,
            page_url,
            domain,
            relevance,
            signature,
            indexed_at: Utc::now(),
            content_sha256: None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.domain.is_empty() {
            return Err("empty domain".into());
        }
        if !self.relevance.is_finite() || self.relevance < 0.0 {
            return Err(format!(
                "relevance {} is not a finite nonnegative number",
                self.relevance
            ));
        }
        if self.id != entry_id(&self.image_url, &self.page_url, &self.domain) {
            return Err(format!("id {} does not match its (image, page, domain) key", self.id));
        }
        Ok(())
    }
}

/// Stable id derived from the upsert key `(image_url, page_url, domain)`.
pub fn entry_id(image_url: &Url, page_url: &Url, domain: &str) -> String {
    let mut h = Sha256::new();
    for part in [image_url.as_str(), page_url.as_str(), domain] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex(&h.finalize()[..10])
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Integer relevance bounds of a domain: floor of the smallest and ceiling
/// of the largest stored relevance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainBounds {
    pub domain: String,
    pub rel_min: i64,
    pub rel_max: i64,
}

/// An immutable view of the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    entries: BTreeMap<String, ImageEntry>,
}

impl Snapshot {
    /// Loads a store file. A final line without a newline is assumed to be
    /// mid-write and skipped; any other unparsable line is an error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        let complete = match bytes.iter().rposition(|&b| b == b'\n') {
            Some(last) => &bytes[..=last],
            None => &bytes[..0],
        };
        let mut snap = Snapshot::default();
        for entry in parse_lines(complete)? {
            snap.entries.insert(entry.id.clone(), entry);
        }
        Ok(snap)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageEntry> {
        self.entries.get(id)
    }

    /// All entries in id order.
    pub fn iter(&self) -> impl Iterator<Item = &ImageEntry> {
        self.entries.values()
    }

    /// Entries of `domain` whose relevance lies in `[min, max]`, in id order.
    pub fn scan<'a>(
        &'a self,
        domain: &'a str,
        min: f64,
        max: f64,
    ) -> Result<impl Iterator<Item = &'a ImageEntry> + 'a, StoreError> {
        if min.is_nan() || max.is_nan() || min > max {
            return Err(StoreError::InvalidRange { min, max });
        }
        Ok(self
            .entries
            .values()
            .filter(move |e| e.domain == domain && e.relevance >= min && e.relevance <= max))
    }

    pub fn domain_bounds(&self, domain: &str) -> Result<DomainBounds, StoreError> {
        self.all_bounds()
            .into_iter()
            .find(|b| b.domain == domain)
            .ok_or_else(|| StoreError::EmptyDomain(domain.to_string()))
    }

    /// Bounds of every domain with at least one entry, sorted by domain name.
    pub fn all_bounds(&self) -> Vec<DomainBounds> {
        let mut ranges: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for e in self.entries.values() {
            let r = ranges.entry(&e.domain).or_insert((e.relevance, e.relevance));
            r.0 = r.0.min(e.relevance);
            r.1 = r.1.max(e.relevance);
        }
        ranges
            .into_iter()
            .map(|(domain, (lo, hi))| DomainBounds {
                domain: domain.to_string(),
                rel_min: lo.floor() as i64,
                rel_max: hi.ceil() as i64,
            })
            .collect()
    }

    pub fn export_jsonl(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        write_atomically(path.as_ref(), |w| {
            for e in self.entries.values() {
                serde_json::to_writer(&mut *w, e).map_err(io::Error::other)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    fn upsert(&mut self, entry: ImageEntry) {
        self.entries.insert(entry.id.clone(), entry);
    }
}

fn parse_lines(bytes: &[u8]) -> Result<Vec<ImageEntry>, StoreError> {
    let mut out = Vec::new();
    for (idx, line) in bytes.split(|&b| b == b'\n').enumerate() {
        let line_no = idx + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let entry: ImageEntry = serde_json::from_slice(line).map_err(|e| StoreError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        entry
            .validate()
            .map_err(|message| StoreError::Malformed { line: line_no, message })?;
        out.push(entry);
    }
    Ok(out)
}

/// Reads a JSON-Lines export, failing on the first malformed line.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<ImageEntry>, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_lines(&bytes)
}

fn write_atomically(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<&mut tempfile::NamedTempFile>) -> io::Result<()>,
) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    {
        let mut w = BufWriter::new(&mut tmp);
        body(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Writable handle on a store file.
pub struct Repository {
    path: PathBuf,
    log: Mutex<File>,
    snapshot: RwLock<Arc<Snapshot>>,
    _lock: File,
}

impl Repository {
    /// Opens (creating if needed) a store for writing.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let lock_path = sidecar(&path, "lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(path)),
            Err(fs::TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
        }

        let mut log = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let snapshot = Snapshot::load(&path)?;
        // Drop a torn final line left by an interrupted writer.
        let mut complete_len = 0u64;
        {
            let mut reader = BufReader::new(&mut log);
            reader.seek(SeekFrom::Start(0)).map_err(io_err(&path))?;
            let mut line = Vec::new();
            loop {
                line.clear();
                let n = reader.read_until(b'\n', &mut line).map_err(io_err(&path))?;
                if n == 0 || line.last() != Some(&b'\n') {
                    break;
                }
                complete_len += n as u64;
            }
        }
        log.set_len(complete_len).map_err(io_err(&path))?;

        Ok(Repository {
            path,
            log: Mutex::new(log),
            snapshot: RwLock::new(Arc::new(snapshot)),
            _lock: lock,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    /// Inserts or replaces the entry with the same `(image_url, page_url,
    /// domain)` key and returns its id.
    pub fn insert(&self, entry: ImageEntry) -> Result<String, StoreError> {
        entry.validate().map_err(StoreError::InvalidEntry)?;
        let mut line = serde_json::to_vec(&entry).expect("entries always serialize");
        line.push(b'\n');

        let mut log = self.log.lock().expect("log lock poisoned");
        log.write_all(&line).map_err(io_err(&self.path))?;
        let id = entry.id.clone();
        let mut snap = self.snapshot.write().expect("snapshot lock poisoned");
        Arc::make_mut(&mut snap).upsert(entry);
        Ok(id)
    }

    /// Upserts every entry of a JSON-Lines export. Nothing is written if
    /// any line is malformed.
    pub fn import_jsonl(&self, path: impl AsRef<Path>) -> Result<usize, StoreError> {
        let entries = read_jsonl(path)?;
        let n = entries.len();
        for e in entries {
            self.insert(e)?;
        }
        Ok(n)
    }

    /// Rewrites the store file with one line per live entry, in id order.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut log = self.log.lock().expect("log lock poisoned");
        self.snapshot().export_jsonl(&self.path)?;
        *log = OpenOptions::new()
            .read(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        Ok(())
    }

    pub fn sync(&self) -> Result<(), StoreError> {
        self.log
            .lock()
            .expect("log lock poisoned")
            .sync_data()
            .map_err(io_err(&self.path))
    }

    /// Stores image bytes in the thumbnail cache, returning their hash.
    pub fn cache_image(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let dir = thumb_dir(&self.path);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let hash = content_hash(bytes);
        let target = dir.join(&hash);
        if !target.exists() {
            write_atomically(&target, |w| w.write_all(bytes))?;
        }
        Ok(hash)
    }
}

fn sidecar(db: &Path, ext: &str) -> PathBuf {
    let mut name = db.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(ext);
    db.with_file_name(name)
}

pub fn thumb_dir(db: &Path) -> PathBuf {
    sidecar(db, "thumbs")
}

/// Cached bytes for `entry`, if any.
pub fn read_thumb(db: &Path, entry: &ImageEntry) -> Option<Vec<u8>> {
    let hash = entry.content_sha256.as_deref()?;
    if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    fs::read(thumb_dir(db).join(hash)).ok()
}

/// File length and modification time.
type Fingerprint = (u64, SystemTime);

/// Read-only view that reloads the store file when it changes on disk.
pub struct SnapshotReader {
    path: PathBuf,
    cached: Mutex<(Option<Fingerprint>, Arc<Snapshot>)>,
}

impl SnapshotReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let reader = SnapshotReader {
            cached: Mutex::new((None, Arc::new(Snapshot::default()))),
            path,
        };
        reader.current()?;
        Ok(reader)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn current(&self) -> Result<Arc<Snapshot>, StoreError> {
        let meta = fs::metadata(&self.path).map_err(io_err(&self.path))?;
        let fingerprint = (meta.len(), meta.modified().map_err(io_err(&self.path))?);
        let mut cached = self.cached.lock().expect("reader lock poisoned");
        if cached.0 != Some(fingerprint) {
            let snap = Arc::new(Snapshot::load(&self.path)?);
            *cached = (Some(fingerprint), snap);
        }
        Ok(cached.1.clone())
    }
}
