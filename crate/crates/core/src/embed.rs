//! Embedding extraction that needs no forward pass: averaging rows of a
//! learned token-embedding table, and mean-pooling precomputed activations.

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{CorpusError, EmbeddingMatrix};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("empty token list")]
    EmptyTokens,
    #[error("token id {id} out of vocabulary (size {vocab_size})")]
    OutOfVocabulary { id: u32, vocab_size: usize },
    #[error("every token is masked")]
    AllMasked,
    #[error("mask has {mask} entries but sequence has {rows} rows")]
    MaskLength { mask: usize, rows: usize },
    #[error("sequence {index}: {source}")]
    Sequence {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("activation dimension {found} differs from expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// `vocab_size × dim` table of token embeddings.
#[derive(Debug, Clone)]
pub struct TokenEmbeddingTable(EmbeddingMatrix);

impl TokenEmbeddingTable {
    pub fn new(rows: EmbeddingMatrix) -> Self {
        Self(rows)
    }

    pub fn vocab_size(&self) -> usize {
        self.0.n()
    }

    pub fn dim(&self) -> usize {
        self.0.d()
    }

    pub fn row(&self, id: u32) -> Option<&[f32]> {
        ((id as usize) < self.0.n()).then(|| self.0.row(id as usize))
    }
}

/// Per-token final-layer activations of one sequence.
pub type ActivationSequence = EmbeddingMatrix;

/// Mean of the table rows referenced by `tokens`.
///
/// Rows are summed in ascending token-id order so the result is bit-for-bit
/// invariant under permutation of `tokens`.
pub fn embed_bag_of_tokens(tokens: &[u32], table: &TokenEmbeddingTable) -> Result<Vec<f32>> {
    if tokens.is_empty() {
        return Err(EmbedError::EmptyTokens);
    }
    let mut sorted = tokens.to_vec();
    sorted.sort_unstable();
    let mut acc = vec![0.0f64; table.dim()];
    for &t in &sorted {
        let row = table.row(t).ok_or(EmbedError::OutOfVocabulary {
            id: t,
            vocab_size: table.vocab_size(),
        })?;
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    let inv = 1.0 / sorted.len() as f64;
    Ok(acc.into_iter().map(|a| (a * inv) as f32).collect())
}

/// Like [`embed_bag_of_tokens`] but skips the listed token ids (for example
/// eod and pad markers of packed sequences).
pub fn embed_bag_of_tokens_excluding(
    tokens: &[u32],
    table: &TokenEmbeddingTable,
    exclude: &[u32],
) -> Result<Vec<f32>> {
    let kept: Vec<u32> = tokens
        .iter()
        .copied()
        .filter(|t| !exclude.contains(t))
        .collect();
    embed_bag_of_tokens(&kept, table)
}

/// Arithmetic mean over unmasked rows. `mask[i] == true` keeps row `i`.
pub fn pool_activations(acts: &ActivationSequence, mask: Option<&[bool]>) -> Result<Vec<f32>> {
    if let Some(m) = mask {
        if m.len() != acts.n() {
            return Err(EmbedError::MaskLength {
                mask: m.len(),
                rows: acts.n(),
            });
        }
    }
    let mut acc = vec![0.0f64; acts.d()];
    let mut count = 0usize;
    for (i, row) in acts.rows().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        count += 1;
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    if count == 0 {
        return Err(EmbedError::AllMasked);
    }
    let inv = 1.0 / count as f64;
    Ok(acc.into_iter().map(|a| (a * inv) as f32).collect())
}

/// Bag-of-tokens embedding of every sequence; row `i` is sequence `i`.
pub fn embed_corpus(
    sequences: &[Vec<u32>],
    table: &TokenEmbeddingTable,
    exclude: &[u32],
) -> Result<EmbeddingMatrix> {
    let rows: Vec<Vec<f32>> = sequences
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            embed_bag_of_tokens_excluding(s, table, exclude).map_err(|e| EmbedError::Sequence {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(EmbedError::EmptyTokens);
    }
    Ok(EmbeddingMatrix::from_rows(&rows)?)
}

/// Mean-pools each activation sequence into one row.
pub fn pool_corpus(sequences: &[ActivationSequence]) -> Result<EmbeddingMatrix> {
    let dim = sequences.first().map_or(0, |s| s.d());
    let rows: Vec<Vec<f32>> = sequences
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            if s.d() != dim {
                return Err(EmbedError::DimMismatch {
                    expected: dim,
                    found: s.d(),
                });
            }
            pool_activations(s, None).map_err(|e| EmbedError::Sequence {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(EmbeddingMatrix::from_rows(&rows)?)
}
