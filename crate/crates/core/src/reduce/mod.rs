//! Dimensionality reduction ahead of clustering: standardized PCA and sparse
//! random projection, both followed by per-row L2 normalization.
//!
//! Rows whose reduced vector has zero norm cannot be normalized. They are
//! replaced by the first basis vector `e₁` and listed in
//! [`Reduced::degenerate_rows`].

mod io;
mod pca;
mod rp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{CorpusError, EmbeddingMatrix};

pub use io::{read_reducer, write_reducer, RED_MAGIC};
pub use pca::{apply_pca, fit_pca, fit_pca_with, PcaModel, PcaSolver, DENSE_SOLVER_MAX_DIM};
pub use rp::{apply_rp, fit_rp, RpModel};

/// Default number of rows used to fit PCA.
pub const DEFAULT_FIT_SAMPLE: usize = 500_000;
/// Default reduced dimensionality.
pub const DEFAULT_K: usize = 64;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: model expects {expected}, input has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("iterative eigensolver did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("reducer file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, ReduceError>;

/// Normalized output of a reducer.
#[derive(Debug, Clone)]
pub struct Reduced {
    pub matrix: EmbeddingMatrix,
    /// Rows whose projection had zero norm and were replaced by `e₁`.
    pub degenerate_rows: Vec<usize>,
}

/// L2-normalizes each `k`-wide row of `raw`.
pub(crate) fn normalize_rows(raw: Vec<f64>, n: usize, k: usize) -> Result<Reduced> {
    let mut out = Vec::with_capacity(n * k);
    let mut degenerate_rows = Vec::new();
    for (i, row) in raw.chunks_exact(k).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            out.extend(row.iter().map(|v| (v / norm) as f32));
        } else {
            degenerate_rows.push(i);
            out.push(1.0);
            out.extend(std::iter::repeat_n(0.0, k - 1));
        }
    }
    Ok(Reduced {
        matrix: EmbeddingMatrix::new(n, k, out)?,
        degenerate_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Pca,
    Rp,
}

impl std::str::FromStr for Scheme {
    type Err = ReduceError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Scheme::Pca),
            "rp" | "random-projection" => Ok(Scheme::Rp),
            other => Err(ReduceError::InvalidParameter(format!(
                "unknown reducer scheme '{other}'"
            ))),
        }
    }
}

/// A fitted reducer of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Reducer {
    Pca(PcaModel),
    Rp(RpModel),
}

impl Reducer {
    pub fn in_dim(&self) -> usize {
        match self {
            Reducer::Pca(m) => m.in_dim(),
            Reducer::Rp(m) => m.in_dim(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Reducer::Pca(m) => m.k(),
            Reducer::Rp(m) => m.k(),
        }
    }

    pub fn apply(&self, x: &EmbeddingMatrix) -> Result<Reduced> {
        match self {
            Reducer::Pca(m) => apply_pca(m, x),
            Reducer::Rp(m) => apply_rp(m, x),
        }
    }
}

/// Sorted row indices of the PCA fit sample: every row when `n ≤ size`,
/// otherwise a seeded uniform sample without replacement.
pub fn fit_sample_indices(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if n <= size {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Fits the requested scheme. PCA is fitted on a sample of at most
/// `sample_size` rows drawn with `seed`; RP only uses `seed`.
pub fn fit(
    scheme: Scheme,
    x: &EmbeddingMatrix,
    k: usize,
    sample_size: usize,
    seed: u64,
) -> Result<Reducer> {
    match scheme {
        Scheme::Pca => {
            let idx = fit_sample_indices(x.n(), sample_size, seed);
            let model = if idx.len() == x.n() {
                fit_pca(x, k)?
            } else {
                fit_pca(&x.select_rows(&idx)?, k)?
            };
            Ok(Reducer::Pca(model))
        }
        Scheme::Rp => Ok(Reducer::Rp(fit_rp(x.d(), k, seed)?)),
    }
}
