//! `RED1` reducer files: magic, scheme tag byte (1 = PCA, 2 = RP), `u32`
//! input dimension, `u32` output dimension, then the scheme payload, all
//! little-endian.
//!
//! PCA payload: mean (d × f64), scale (d × f64), explained variance
//! (k × f64), components (k·d × f64, row-major).
//! RP payload: seed (u64), signs (k·d × i8, row-major).

use std::path::Path;

use super::{PcaModel, ReduceError, Reducer, Result, RpModel};

pub const RED_MAGIC: &[u8; 4] = b"RED1";
const TAG_PCA: u8 = 1;
const TAG_RP: u8 = 2;

pub fn write_reducer(path: impl AsRef<Path>, reducer: &Reducer) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(reducer)).map_err(|source| ReduceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_reducer(path: impl AsRef<Path>) -> Result<Reducer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ReduceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

pub(crate) fn encode(reducer: &Reducer) -> Vec<u8> {
    let mut b = RED_MAGIC.to_vec();
    let put_f64s = |b: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            b.extend_from_slice(&x.to_le_bytes());
        }
    };
    match reducer {
        Reducer::Pca(m) => {
            b.push(TAG_PCA);
            b.extend_from_slice(&(m.d as u32).to_le_bytes());
            b.extend_from_slice(&(m.k as u32).to_le_bytes());
            put_f64s(&mut b, &m.mean);
            put_f64s(&mut b, &m.scale);
            put_f64s(&mut b, &m.explained_variance);
            put_f64s(&mut b, &m.components);
        }
        Reducer::Rp(m) => {
            b.push(TAG_RP);
            b.extend_from_slice(&(m.d as u32).to_le_bytes());
            b.extend_from_slice(&(m.k as u32).to_le_bytes());
            b.extend_from_slice(&m.seed.to_le_bytes());
            b.extend(m.signs.iter().map(|&s| s as u8));
        }
    }
    b
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(ReduceError::Format("truncated payload".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ReduceError::Format("non-finite value in payload".into()));
        }
        Ok(v)
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Reducer> {
    let mut c = Cursor(bytes);
    if c.take(4)? != RED_MAGIC {
        return Err(ReduceError::Format("bad magic, expected \"RED1\"".into()));
    }
    let tag = c.take(1)?[0];
    let d = c.u32()?;
    let k = c.u32()?;
    if d == 0 || k == 0 {
        return Err(ReduceError::Format(format!("empty shape {d} -> {k}")));
    }
    let reducer = match tag {
        TAG_PCA => {
            let mean = c.f64s(d)?;
            let scale = c.f64s(d)?;
            let explained_variance = c.f64s(k)?;
            let components = c.f64s(k * d)?;
            Reducer::Pca(PcaModel {
                d,
                k,
                mean,
                scale,
                components,
                explained_variance,
            })
        }
        TAG_RP => {
            let seed = u64::from_le_bytes(c.take(8)?.try_into().unwrap());
            let signs = c.take(k * d)?.iter().map(|&s| s as i8).collect();
            Reducer::Rp(RpModel::from_signs(seed, d, k, signs)?)
        }
        other => return Err(ReduceError::Format(format!("unknown scheme tag {other}"))),
    };
    if !c.0.is_empty() {
        return Err(ReduceError::Format("trailing bytes".into()));
    }
    Ok(reducer)
}
