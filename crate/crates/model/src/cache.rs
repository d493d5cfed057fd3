//! Append-only prediction log with an offset index, so experiments can be
//! replayed without touching the network.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cmbe_core::source::render_prompt;
use cmbe_core::{ModelError, NliSample, ProbDist, ProbSource, PromptMode};
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::endpoint::key_for;

/// Rewrite the index after this many appends (and on flush/drop).
const INDEX_EVERY: usize = 256;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    source: String,
    dist: ProbDist,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    /// Log length the offsets describe; a mismatch forces a rescan.
    log_len: u64,
    offsets: BTreeMap<String, u64>,
}

#[derive(Debug)]
struct State {
    file: File,
    index: Index,
    unsaved: usize,
}

#[derive(Debug)]
pub struct ReplayCache {
    path: PathBuf,
    index_path: PathBuf,
    state: Mutex<State>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Io(format!("{}: {e}", path.display()))
}

impl ReplayCache {
    /// Opens (or creates) the log at `path`; the index lives next to it with
    /// an `.idx` suffix.
    pub fn open(path: impl Into<PathBuf>) -> Result<ReplayCache, ModelError> {
        let path = path.into();
        let mut index_path = path.clone().into_os_string();
        index_path.push(".idx");
        let index_path = PathBuf::from(index_path);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let log_len = file.metadata().map_err(|e| io_err(&path, e))?.len();
        let stored: Option<Index> = std::fs::read(&index_path)
            .ok()
            .and_then(|bytes| serde_json::from_slice(&bytes).ok());
        let cache = ReplayCache {
            path,
            index_path,
            state: Mutex::new(State {
                file,
                index: Index::default(),
                unsaved: 0,
            }),
        };
        match stored {
            Some(idx) if idx.log_len == log_len => cache.state.lock().expect("cache poisoned").index = idx,
            _ => cache.rebuild()?,
        }
        Ok(cache)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rescans the log, dropping a torn final line left by a crash.
    fn rebuild(&self) -> Result<(), ModelError> {
        let mut state = self.state.lock().expect("cache poisoned");
        let mut offsets = BTreeMap::new();
        let mut good_len = 0u64;
        {
            let mut reader = BufReader::new(&state.file);
            reader.seek(SeekFrom::Start(0)).map_err(|e| io_err(&self.path, e))?;
            let mut line = String::new();
            let mut pos = 0u64;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(|e| io_err(&self.path, e))?;
                if n == 0 {
                    break;
                }
                let complete = line.ends_with('\n');
                match serde_json::from_str::<Entry>(line.trim_end()) {
                    Ok(entry) if complete => {
                        offsets.entry(entry.key).or_insert(pos);
                        good_len = pos + n as u64;
                    }
                    _ if !complete => break,
                    Err(e) => return Err(io_err(&self.path, format!("corrupt entry at byte {pos}: {e}"))),
                    Ok(_) => unreachable!(),
                }
                pos += n as u64;
            }
        }
        let len = state.file.metadata().map_err(|e| io_err(&self.path, e))?.len();
        if good_len < len {
            warn!("{}: dropping {} byte(s) of torn trailing entry", self.path.display(), len - good_len);
            state.file.set_len(good_len).map_err(|e| io_err(&self.path, e))?;
        }
        state.index = Index { log_len: good_len, offsets };
        self.save_index(&mut state)
    }

    fn save_index(&self, state: &mut State) -> Result<(), ModelError> {
        let dir = self.index_path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
        serde_json::to_writer(&mut tmp, &state.index).map_err(|e| io_err(&self.index_path, e))?;
        tmp.flush().map_err(|e| io_err(&self.index_path, e))?;
        tmp.persist(&self.index_path).map_err(|e| io_err(&self.index_path, e))?;
        state.unsaved = 0;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache poisoned").index.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Result<Option<ProbDist>, ModelError> {
        let mut state = self.state.lock().expect("cache poisoned");
        let Some(&offset) = state.index.offsets.get(key) else {
            return Ok(None);
        };
        let mut reader = BufReader::new(&mut state.file);
        reader.seek(SeekFrom::Start(offset)).map_err(|e| io_err(&self.path, e))?;
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| io_err(&self.path, e))?;
        let entry: Entry = serde_json::from_str(line.trim_end())
            .map_err(|e| io_err(&self.path, format!("entry at byte {offset}: {e}")))?;
        if entry.key != key {
            return Err(io_err(&self.path, format!("index points at the wrong entry for {key}")));
        }
        Ok(Some(entry.dist))
    }

    /// Appends an entry unless the key is already present; the first
    /// recorded answer wins.
    pub fn put(&self, key: &str, source: &str, dist: ProbDist) -> Result<(), ModelError> {
        let mut state = self.state.lock().expect("cache poisoned");
        if state.index.offsets.contains_key(key) {
            return Ok(());
        }
        let mut line = serde_json::to_string(&Entry {
            key: key.to_string(),
            source: source.to_string(),
            dist,
        })
        .map_err(|e| io_err(&self.path, e))?;
        line.push('\n');
        let offset = state.index.log_len;
        state.file.write_all(line.as_bytes()).map_err(|e| io_err(&self.path, e))?;
        state.index.log_len += line.len() as u64;
        state.index.offsets.insert(key.to_string(), offset);
        state.unsaved += 1;
        if state.unsaved >= INDEX_EVERY {
            self.save_index(&mut state)?;
        }
        Ok(())
    }

    pub fn flush(&self) -> Result<(), ModelError> {
        let mut state = self.state.lock().expect("cache poisoned");
        state.file.sync_data().map_err(|e| io_err(&self.path, e))?;
        self.save_index(&mut state)
    }
}

impl Drop for ReplayCache {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            warn!("failed to save cache index: {e}");
        }
    }
}

/// Wraps a source with the replay cache. Without an inner source the
/// wrapper is offline: a cache miss is an error and nothing touches the
/// network.
pub struct CachedSource<'c, S> {
    inner: Option<S>,
    source_id: String,
    cache: &'c ReplayCache,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<'c, S: ProbSource> CachedSource<'c, S> {
    pub fn online(inner: S, cache: &'c ReplayCache) -> Self {
        CachedSource {
            source_id: inner.source_id(),
            inner: Some(inner),
            cache,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// `source_id` must equal the id of the source that filled the cache.
    pub fn offline(source_id: impl Into<String>, cache: &'c ReplayCache) -> Self {
        CachedSource {
            inner: None,
            source_id: source_id.into(),
            cache,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> Option<&S> {
        self.inner.as_ref()
    }
}

impl<S: ProbSource> ProbSource for CachedSource<'_, S> {
    fn source_id(&self) -> String {
        self.source_id.clone()
    }

    fn predict(&self, sample: &NliSample, mode: &PromptMode) -> Result<ProbDist, ModelError> {
        let key = key_for(&self.source_id, &render_prompt(sample, mode));
        if let Some(d) = self.cache.get(&key)? {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(d);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let Some(inner) = &self.inner else {
            return Err(ModelError::CacheMiss(key));
        };
        debug!("cache miss for {}", sample.id);
        let d = inner.predict(sample, mode)?;
        self.cache.put(&key, &self.source_id, d)?;
        Ok(d)
    }
}
