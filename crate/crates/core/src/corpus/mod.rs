//! On-disk formats and in-memory containers for embeddings, example metadata
//! and token streams.

mod emb;
mod meta;
mod pack;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emb::{read_embeddings, write_embeddings, EMB_MAGIC};
pub use meta::{read_metadata, write_metadata};
pub use pack::{pack_documents, DocSpan, PackedSequence};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("invalid packing: {0}")]
    Packing(String),
    #[error("inconsistent corpus: {0}")]
    Inconsistent(String),
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Dense row-major table of `n` example vectors of dimension `d`.
///
/// Every entry is finite; constructors reject anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(CorpusError::Shape(format!(
                "matrix must be non-empty, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(CorpusError::Shape(format!(
                "{n}x{d} matrix needs {} values, got {}",
                n * d,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { n, d, data })
    }

    /// Builds a matrix from rows of equal length.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(CorpusError::Shape(format!(
                    "row {i} has length {}, expected {d}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(CorpusError::Shape(format!(
                    "row index {i} out of range for {} rows",
                    self.n
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.d, data)
    }
}

/// Per-example metadata: identity, data source, length and per-checkpoint
/// pretraining losses keyed by gradient step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: u64,
    pub source: u32,
    pub token_count: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub losses: BTreeMap<u64, f64>,
}

impl ExampleRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.token_count == 0 {
            return Err(format!("example {}: token_count must be >= 1", self.id));
        }
        if let Some((step, v)) = self.losses.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!(
                "example {}: non-finite loss {v} at step {step}",
                self.id
            ));
        }
        Ok(())
    }
}

/// Per-example losses at one checkpoint, aligned with corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub step: u64,
    pub values: Vec<f64>,
}

/// Records plus zero or more embedding matrices (one per embedding model),
/// all aligned row-for-row with `records`.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<ExampleRecord>,
    pub embeddings: BTreeMap<String, EmbeddingMatrix>,
    pub checkpoint_steps: Vec<u64>,
}

impl Corpus {
    /// Assembles a corpus and checks the cross-table invariants.
    pub fn new(
        records: Vec<ExampleRecord>,
        embeddings: BTreeMap<String, EmbeddingMatrix>,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id) {
                return Err(CorpusError::DuplicateId(r.id));
            }
            r.validate().map_err(CorpusError::Inconsistent)?;
        }
        for (tag, m) in &embeddings {
            if m.n() != records.len() {
                return Err(CorpusError::Inconsistent(format!(
                    "embedding '{tag}' has {} rows but corpus has {} records",
                    m.n(),
                    records.len()
                )));
            }
        }
        let mut checkpoint_steps: Option<Vec<u64>> = None;
        for r in records.iter().filter(|r| !r.losses.is_empty()) {
            let steps: Vec<u64> = r.losses.keys().copied().collect();
            match &checkpoint_steps {
                None => checkpoint_steps = Some(steps),
                Some(s) if *s != steps => {
                    return Err(CorpusError::Inconsistent(format!(
                        "example {} has checkpoint steps {steps:?}, expected {s:?}",
                        r.id
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            records,
            embeddings,
            checkpoint_steps: checkpoint_steps.unwrap_or_default(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.id).collect()
    }

    pub fn sources(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.source).collect()
    }

    pub fn token_counts(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.token_count).collect()
    }

    /// Loss column for one checkpoint. Every record must carry that step.
    pub fn loss_table(&self, step: u64) -> Result<LossTable> {
        let values = self
            .records
            .iter()
            .map(|r| {
                r.losses.get(&step).copied().ok_or_else(|| {
                    CorpusError::Inconsistent(format!(
                        "example {} has no loss for step {step}",
                        r.id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LossTable { step, values })
    }
}
