//! Scene catalog and append-only session logs.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lanegraph_core::raster_io::{read_manifest, read_scene, Manifest, ManifestEntry, StoredScene};
use lanegraph_core::Result;
use serde::Serialize;
use serde_json::Value;

/// Scenes under one directory, read from disk on demand.
#[derive(Debug, Clone)]
pub struct SceneCatalog {
    root: PathBuf,
    manifest: Manifest,
    by_id: HashMap<String, usize>,
}

impl SceneCatalog {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = read_manifest(&root)?;
        let by_id = manifest
            .scenes
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        Ok(SceneCatalog { root, manifest, by_id })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.manifest.scenes.iter().map(|e| e.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.manifest.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.scenes.is_empty()
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.by_id.get(id).map(|&i| &self.manifest.scenes[i])
    }

    /// `None` for an unknown id.
    pub fn load(&self, id: &str) -> Option<Result<StoredScene>> {
        self.entry(id).map(|e| read_scene(&self.root, e))
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    ts: u128,
    session: &'a str,
    action: &'a str,
    payload: &'a Value,
}

/// JSON-lines edit logs, one file per session. Each record is written and
/// flushed as a whole line, so a log is valid after any interruption.
#[derive(Debug, Clone, Default)]
pub struct SessionLog {
    dir: Option<PathBuf>,
}

impl SessionLog {
    /// Logs under `dir`; `None` keeps edit logs in memory only.
    pub fn new(dir: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(SessionLog { dir })
    }

    pub fn path(&self, session: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{session}.jsonl")))
    }

    pub fn append(&self, session: &str, action: &str, payload: &Value) -> std::io::Result<()> {
        let Some(path) = self.path(session) else {
            return Ok(());
        };
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let mut line = serde_json::to_vec(&LogLine {
            ts,
            session,
            action,
            payload,
        })?;
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        f.write_all(&line)?;
        f.flush()
    }
}

/// Reads a session log back as JSON values.
pub fn read_log(path: &Path) -> std::io::Result<Vec<Value>> {
    fs::read_to_string(path)?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::from))
        .collect()
}
