//! Atomic output files, JSONL input and provenance records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use cmbe_core::NliSample;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::exit::Coded;

/// Provenance written next to (or into) every output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl RunInfo {
    pub fn new(command: &str, config_hash: String, seed: u64) -> RunInfo {
        RunInfo {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            seed,
            ..Default::default()
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush().with_context(|| format!("writing {}", path.display()))?;
    }
    tmp.persist(path).with_context(|| format!("moving output into {}", path.display()))?;
    Ok(())
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// JSON document with the run record under a top-level `run` key.
pub fn write_json(path: &Path, body: &impl Serialize, run: &RunInfo) -> anyhow::Result<()> {
    let mut value = serde_json::to_value(body)?;
    if let Value::Object(map) = &mut value {
        map.insert("run".into(), serde_json::to_value(run)?);
    }
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &value)?;
        w.write_all(b"\n")
    })
}

pub fn write_plain_json(path: &Path, body: &impl Serialize) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, body)?;
        w.write_all(b"\n")
    })
}

/// JSONL rows plus a `<file>.meta.json` sidecar with the run record.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T], run: &RunInfo) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        for r in rows {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    write_plain_json(&meta_path(path), run)
}

pub fn read_meta(path: &Path) -> anyhow::Result<Option<RunInfo>> {
    let meta = meta_path(path);
    if !meta.exists() {
        return Ok(None);
    }
    read_json(&meta).map(Some)
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).map_err(|e| Coded::io(format!("cannot read {}: {e}", path.display())).into())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let file = open(path)?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Coded::io(format!("{}: {e}", path.display())).into())
}

/// Reads one JSON value per non-blank line; errors name the file and line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Coded::io(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(row);
    }
    Ok(out)
}

pub fn read_samples(path: &Path) -> anyhow::Result<Vec<NliSample>> {
    let samples: Vec<NliSample> = read_jsonl(path)?;
    for (i, s) in samples.iter().enumerate() {
        s.validate()
            .map_err(|e| Coded::validation(format!("{} (row {}): {e}", path.display(), i + 1)))?;
    }
    Ok(samples)
}

/// The file name without extension, used as the dataset label in reports.
pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// `dir/name.ext` becomes `dir/name.<tag>.ext`.
pub fn tagged(path: &Path, tag: &str) -> PathBuf {
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{}.{tag}{ext}", stem(path)))
}
