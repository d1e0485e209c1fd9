use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{normalize_rows, ReduceError, Reduced, Result};
use crate::corpus::EmbeddingMatrix;
use crate::distance::CompensatedSum;

/// Above this input dimension the top-k directions come from subspace
/// iteration instead of a full symmetric eigendecomposition.
pub const DENSE_SOLVER_MAX_DIM: usize = 1024;
const ITERATIVE_TOL: f64 = 1e-8;
const ITERATIVE_MAX_ITERS: usize = 2000;
const COV_CHUNK: usize = 1024;
const COV_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaSolver {
    #[default]
    Auto,
    Dense,
    Iterative,
}

/// Fitted standardized PCA: `project(x) = components · ((x − mean) / scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub(crate) d: usize,
    pub(crate) k: usize,
    pub(crate) mean: Vec<f64>,
    pub(crate) scale: Vec<f64>,
    /// `k × d`, row-major, orthonormal rows.
    pub(crate) components: Vec<f64>,
    pub(crate) explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn in_dim(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.components[j * self.d..(j + 1) * self.d]
    }

    /// Variance of the standardized sample along each component, descending.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Standardizes and projects one row without normalizing.
    pub fn project_row(&self, x: &[f32], z: &mut Vec<f64>, out: &mut [f64]) {
        z.clear();
        z.extend(
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(&v, (m, s))| (f64::from(v) - m) / s),
        );
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot64(self.component(j), z);
        }
    }

    /// Standardized projections of every row, `n × k` row-major, unnormalized.
    pub fn project(&self, x: &EmbeddingMatrix) -> Result<Vec<f64>> {
        check_dim(self.d, x.d())?;
        let k = self.k;
        let mut out = vec![0.0f64; x.n() * k];
        out.par_chunks_mut(k * 256)
            .enumerate()
            .for_each(|(c, block)| {
                let mut z = Vec::with_capacity(self.d);
                for (r, o) in block.chunks_exact_mut(k).enumerate() {
                    self.project_row(x.row(c * 256 + r), &mut z, o);
                }
            });
        Ok(out)
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(ReduceError::DimMismatch { expected, found });
    }
    Ok(())
}

#[inline]
fn dot64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Per-dimension mean and population standard deviation. Dimensions with
/// (numerically) zero variance get scale 1.
pub(crate) fn standardization(sample: &EmbeddingMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (sample.n(), sample.d());
    let mean: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|j| {
            let s: CompensatedSum = sample.rows().map(|r| f64::from(r[j])).collect();
            s.value() / n as f64
        })
        .collect();
    let scale: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|j| {
            let m = mean[j];
            let s: CompensatedSum = sample
                .rows()
                .map(|r| {
                    let t = f64::from(r[j]) - m;
                    t * t
                })
                .collect();
            let sd = (s.value() / n as f64).sqrt();
            if sd == 0.0 || sd <= 1e-10 * m.abs() {
                1.0
            } else {
                sd
            }
        })
        .collect();
    (mean, scale)
}

/// `d × d` covariance of the standardized sample (divided by n), row-major.
fn standardized_covariance(sample: &EmbeddingMatrix, mean: &[f64], scale: &[f64]) -> Vec<f64> {
    let (n, d) = (sample.n(), sample.d());
    let group_rows = COV_CHUNK * COV_GROUP;
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(group_rows))
        .into_par_iter()
        .map(|g| {
            let mut acc = vec![0.0f64; d * d];
            let mut z = vec![0.0f64; COV_CHUNK * d];
            let end = ((g + 1) * group_rows).min(n);
            let mut start = g * group_rows;
            while start < end {
                let rows = (end - start).min(COV_CHUNK);
                for r in 0..rows {
                    let x = sample.row(start + r);
                    let zr = &mut z[r * d..(r + 1) * d];
                    for j in 0..d {
                        zr[j] = (f64::from(x[j]) - mean[j]) / scale[j];
                    }
                }
                // acc += zᵀ z
                unsafe {
                    matrixmultiply::dgemm(
                        d,
                        rows,
                        d,
                        1.0,
                        z.as_ptr(),
                        1,
                        d as isize,
                        z.as_ptr(),
                        d as isize,
                        1,
                        1.0,
                        acc.as_mut_ptr(),
                        d as isize,
                        1,
                    );
                }
                start += rows;
            }
            acc
        })
        .collect();
    let mut cov = vec![0.0f64; d * d];
    for p in &partials {
        for (c, v) in cov.iter_mut().zip(p) {
            *c += v;
        }
    }
    let inv = 1.0 / n as f64;
    // symmetrize exactly
    for i in 0..d {
        for j in i..d {
            let v = 0.5 * (cov[i * d + j] + cov[j * d + i]) * inv;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    cov
}

/// Fits standardized PCA with `k` components on `sample`.
pub fn fit_pca(sample: &EmbeddingMatrix, k: usize) -> Result<PcaModel> {
    fit_pca_with(sample, k, PcaSolver::Auto)
}

pub fn fit_pca_with(sample: &EmbeddingMatrix, k: usize, solver: PcaSolver) -> Result<PcaModel> {
    let (n, d) = (sample.n(), sample.d());
    if k == 0 {
        return Err(ReduceError::InvalidParameter("k must be positive".into()));
    }
    if k > d {
        return Err(ReduceError::InvalidParameter(format!(
            "k = {k} exceeds input dimension {d}"
        )));
    }
    if n <= k {
        return Err(ReduceError::InvalidParameter(format!(
            "need more than k = {k} samples, got {n}"
        )));
    }
    let (mean, scale) = standardization(sample);
    let cov = standardized_covariance(sample, &mean, &scale);
    let use_dense = match solver {
        PcaSolver::Auto => d <= DENSE_SOLVER_MAX_DIM,
        PcaSolver::Dense => true,
        PcaSolver::Iterative => false,
    };
    let (values, vectors) = if use_dense {
        top_k_dense(&cov, d, k)
    } else {
        top_k_iterative(&cov, d, k)?
    };
    let mut components = Vec::with_capacity(k * d);
    for v in &vectors {
        components.extend_from_slice(v);
    }
    Ok(PcaModel {
        d,
        k,
        mean,
        scale,
        components,
        explained_variance: values,
    })
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn top_k_dense(cov: &[f64], d: usize, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = DMatrix::from_row_slice(d, d, cov);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        values.push(eig.eigenvalues[c].max(0.0));
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        fix_sign(&mut v);
        vectors.push(v);
    }
    (values, vectors)
}

/// Block subspace iteration with Rayleigh–Ritz extraction.
fn top_k_iterative(cov: &[f64], d: usize, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = (k + 10).min(d);
    let c = DMatrix::from_row_slice(d, d, cov);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0005_eed0_f9ca);
    let mut q = DMatrix::<f64>::from_fn(d, p, |_, _| StandardNormal.sample(&mut rng));
    q = q.qr().q();
    let scale = c
        .diagonal()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(1e-300);
    for _ in 0..ITERATIVE_MAX_ITERS {
        let y = &c * &q;
        q = y.qr().q();
        let t = q.transpose() * &c * &q;
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let ritz = &q * &eig.eigenvectors;
        // residual of the leading k Ritz pairs
        let mut worst = 0.0f64;
        for &j in order.iter().take(k) {
            let v = ritz.column(j);
            let r = &c * v - v * eig.eigenvalues[j];
            worst = worst.max(r.norm());
        }
        let reordered = DMatrix::from_fn(d, p, |i, j| ritz[(i, order[j])]);
        q = reordered;
        if worst <= ITERATIVE_TOL * scale {
            let values = order
                .iter()
                .take(k)
                .map(|&j| eig.eigenvalues[j].max(0.0))
                .collect();
            let vectors = (0..k)
                .map(|j| {
                    let mut v: Vec<f64> = q.column(j).iter().copied().collect();
                    fix_sign(&mut v);
                    v
                })
                .collect();
            return Ok((values, vectors));
        }
    }
    Err(ReduceError::NoConvergence(ITERATIVE_MAX_ITERS))
}

/// Standardize, project and L2-normalize every row.
pub fn apply_pca(model: &PcaModel, x: &EmbeddingMatrix) -> Result<Reduced> {
    let raw = model.project(x)?;
    normalize_rows(raw, x.n(), model.k)
}
