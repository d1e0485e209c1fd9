use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{normalize_rows, ReduceError, Reduced, Result};
use crate::corpus::EmbeddingMatrix;

/// Seeded sparse sign projection. Every cell is `-v`, `0`, `+v` with
/// probabilities 1/4, 1/2, 1/4 where `v = √d / √k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RpModel {
    pub(crate) seed: u64,
    pub(crate) d: usize,
    pub(crate) k: usize,
    /// `k × d` row-major entries in {-1, 0, 1}; the matrix is `value() · signs`.
    pub(crate) signs: Vec<i8>,
    /// Per output row: column indices with +1, then with -1.
    plus: Vec<Vec<u32>>,
    minus: Vec<Vec<u32>>,
}

impl RpModel {
    pub(crate) fn from_signs(seed: u64, d: usize, k: usize, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != k * d || signs.iter().any(|s| !(-1..=1).contains(s)) {
            return Err(ReduceError::Format("bad random-projection payload".into()));
        }
        let mut plus = vec![Vec::new(); k];
        let mut minus = vec![Vec::new(); k];
        for r in 0..k {
            for c in 0..d {
                match signs[r * d + c] {
                    1 => plus[r].push(c as u32),
                    -1 => minus[r].push(c as u32),
                    _ => {}
                }
            }
        }
        Ok(Self {
            seed,
            d,
            k,
            signs,
            plus,
            minus,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn in_dim(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Magnitude of the non-zero entries.
    pub fn value(&self) -> f64 {
        (self.d as f64).sqrt() / (self.k as f64).sqrt()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        f64::from(self.signs[row * self.d + col]) * self.value()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    /// Expected factor by which the projection scales Euclidean lengths,
    /// `sqrt(k · E[entry²]) = sqrt(d / 2)`.
    pub fn expected_scale(&self) -> f64 {
        (self.k as f64 * self.value() * self.value() / 2.0).sqrt()
    }

    pub fn project_row(&self, x: &[f32], out: &mut [f64]) {
        let v = self.value();
        for (j, o) in out.iter_mut().enumerate() {
            let p: f64 = self.plus[j].iter().map(|&c| f64::from(x[c as usize])).sum();
            let m: f64 = self.minus[j]
                .iter()
                .map(|&c| f64::from(x[c as usize]))
                .sum();
            *o = v * (p - m);
        }
    }

    /// Unnormalized projections, `n × k` row-major.
    pub fn project(&self, x: &EmbeddingMatrix) -> Result<Vec<f64>> {
        if x.d() != self.d {
            return Err(ReduceError::DimMismatch {
                expected: self.d,
                found: x.d(),
            });
        }
        let k = self.k;
        let mut out = vec![0.0f64; x.n() * k];
        out.par_chunks_mut(k)
            .enumerate()
            .for_each(|(i, o)| self.project_row(x.row(i), o));
        Ok(out)
    }
}

pub fn fit_rp(in_dim: usize, k: usize, seed: u64) -> Result<RpModel> {
    if k == 0 || in_dim == 0 {
        return Err(ReduceError::InvalidParameter(format!(
            "random projection needs positive dimensions, got {in_dim} -> {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs: Vec<i8> = (0..k * in_dim)
        .map(|_| match rng.gen_range(0u8..4) {
            0 => -1,
            3 => 1,
            _ => 0,
        })
        .collect();
    RpModel::from_signs(seed, in_dim, k, signs)
}

/// Project and L2-normalize every row.
pub fn apply_rp(model: &RpModel, x: &EmbeddingMatrix) -> Result<Reduced> {
    let raw = model.project(x)?;
    normalize_rows(raw, x.n(), model.k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_for_512_to_64() {
        let m = fit_rp(512, 64, 1).unwrap();
        assert!((m.value() - 8f64.sqrt()).abs() < 1e-12);
        assert!((m.value() - 2.828).abs() < 1e-3);
    }

    #[test]
    fn seeded() {
        assert_eq!(fit_rp(40, 8, 9).unwrap(), fit_rp(40, 8, 9).unwrap());
        assert_ne!(
            fit_rp(40, 8, 9).unwrap().signs,
            fit_rp(40, 8, 10).unwrap().signs
        );
    }

    #[test]
    fn zero_row_is_degenerate() {
        let m = fit_rp(6, 3, 0).unwrap();
        let x = EmbeddingMatrix::from_rows(&[[0.0f32; 6], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
        let out = apply_rp(&m, &x).unwrap();
        assert_eq!(out.degenerate_rows[0], 0);
        assert_eq!(out.matrix.row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn project_matches_dense_product() {
        let m = fit_rp(10, 4, 3).unwrap();
        let row: Vec<f32> = (0..10).map(|i| i as f32 * 0.5 - 2.0).collect();
        let mut out = vec![0.0; 4];
        m.project_row(&row, &mut out);
        for (j, &o) in out.iter().enumerate() {
            let want: f64 = (0..10).map(|c| m.entry(j, c) * f64::from(row[c])).sum();
            assert!((o - want).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(fit_rp(10, 0, 0).is_err());
        let m = fit_rp(10, 2, 0).unwrap();
        let x = EmbeddingMatrix::from_rows(&[[1.0f32; 3]]).unwrap();
        assert!(matches!(
            apply_rp(&m, &x),
            Err(ReduceError::DimMismatch { .. })
        ));
    }
}
