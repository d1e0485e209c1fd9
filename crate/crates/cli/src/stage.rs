//! Content-addressed stage caching. A stage is skipped when its key (a hash
//! of its name, parameters and input contents) matches the record left by a
//! previous run and every recorded output still has its recorded hash.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::io::{ensure_parent, sha256_bytes, sha256_file, write_json};

const STAGE_DIR: &str = ".stages";

/// What a finished stage leaves behind, also copied into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    /// Output paths relative to the run directory, with their sha256.
    pub outputs: BTreeMap<String, String>,
    /// Decisions and diagnostics reported by the stage.
    pub summary: Value,
}

pub struct StageRunner {
    root: PathBuf,
    hashes: HashMap<PathBuf, String>,
    pub records: Vec<StageRecord>,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl StageRunner {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join(STAGE_DIR))
            .with_context(|| format!("cannot create {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            hashes: HashMap::new(),
            records: Vec::new(),
            executed: Vec::new(),
            skipped: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// sha256 of a file, memoized for the lifetime of the runner.
    pub fn hash(&mut self, path: &Path) -> Result<String> {
        if let Some(h) = self.hashes.get(path) {
            return Ok(h.clone());
        }
        let h = sha256_file(path)?;
        self.hashes.insert(path.to_path_buf(), h.clone());
        Ok(h)
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn record_path(&self, name: &str) -> PathBuf {
        self.root
            .join(STAGE_DIR)
            .join(format!("{}.stage.json", file_stem(name)))
    }

    fn marker_path(&self, name: &str) -> PathBuf {
        self.root
            .join(STAGE_DIR)
            .join(format!("{}.INCOMPLETE", file_stem(name)))
    }

    /// Runs `body` unless a matching record exists. `body` must write every
    /// path in `outputs` and returns the stage summary.
    pub fn run(
        &mut self,
        name: &str,
        params: Value,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        body: impl FnOnce() -> Result<Value>,
    ) -> Result<Value> {
        let mut key_text = format!("{}\n{name}\n{params}\n", env!("CARGO_PKG_VERSION"));
        for p in inputs {
            let h = self
                .hash(p)
                .with_context(|| format!("stage '{name}': input {}", p.display()))?;
            key_text.push_str(&h);
            key_text.push('\n');
        }
        let key = sha256_bytes(key_text.as_bytes());

        if let Some(rec) = self.cached(name, &key, outputs)? {
            log::info!("stage {name}: up to date");
            self.skipped.push(name.to_string());
            let summary = rec.summary.clone();
            self.records.push(rec);
            return Ok(summary);
        }

        log::info!("stage {name}: running");
        let record_path = self.record_path(name);
        let _ = fs::remove_file(&record_path);
        let marker = self.marker_path(name);
        let listed: Vec<String> = outputs.iter().map(|p| self.relative(p)).collect();
        fs::write(&marker, listed.join("\n") + "\n")
            .with_context(|| format!("cannot write {}", marker.display()))?;
        for p in outputs {
            ensure_parent(p)?;
            self.hashes.remove(p);
        }

        let summary = body().with_context(|| format!("stage '{name}' failed"))?;

        let mut out_hashes = BTreeMap::new();
        for p in outputs {
            let h = self
                .hash(p)
                .with_context(|| format!("stage '{name}' did not produce {}", p.display()))?;
            out_hashes.insert(self.relative(p), h);
        }
        let rec = StageRecord {
            name: name.to_string(),
            key,
            outputs: out_hashes,
            summary: summary.clone(),
        };
        write_json(&record_path, &rec)?;
        fs::remove_file(&marker).with_context(|| format!("cannot remove {}", marker.display()))?;
        self.executed.push(name.to_string());
        self.records.push(rec);
        Ok(summary)
    }

    fn cached(
        &mut self,
        name: &str,
        key: &str,
        outputs: &[PathBuf],
    ) -> Result<Option<StageRecord>> {
        let path = self.record_path(name);
        if !path.exists() || self.marker_path(name).exists() {
            return Ok(None);
        }
        let rec: StageRecord = match crate::io::read_json(&path) {
            Ok(r) => r,
            Err(_) => return Ok(None),
        };
        if rec.key != key || rec.name != name || rec.outputs.len() != outputs.len() {
            return Ok(None);
        }
        for p in outputs {
            let Some(expected) = rec.outputs.get(&self.relative(p)) else {
                return Ok(None);
            };
            if !p.exists() || &self.hash(p)? != expected {
                return Ok(None);
            }
        }
        Ok(Some(rec))
    }
}
