use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{CorpusError, EmbeddingMatrix, Result};

/// Leading bytes of every embedding file.
pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

/// Writes `EMB1`, little-endian `u32` n and d, then n·d little-endian `f32`
/// values in row-major order.
pub fn write_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let n = u32::try_from(m.n())
        .map_err(|_| CorpusError::Shape(format!("{} rows exceed u32", m.n())))?;
    let d = u32::try_from(m.d())
        .map_err(|_| CorpusError::Shape(format!("{} columns exceed u32", m.d())))?;
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let mut buf = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * 4);
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| CorpusError::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(CorpusError::MalformedHeader(format!(
            "file is {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..4] != EMB_MAGIC {
        return Err(CorpusError::MalformedHeader(format!(
            "bad magic {:?}, expected \"EMB1\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(CorpusError::MalformedHeader(format!("empty shape {n}x{d}")));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| CorpusError::MalformedHeader(format!("shape {n}x{d} overflows")))?;
    if payload.len() < expected {
        return Err(CorpusError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(CorpusError::TrailingBytes {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(n, d, data)
}
