//! Slow, direct reference computations. None of these reuse the production
//! code paths; they exist to be compared against them on small inputs.

use thiserror::Error;

use crate::corpus::EmbeddingMatrix;

pub const MAX_ORACLE_N: usize = 1000;
pub const MAX_ORACLE_PCA_DIM: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("input too large for the oracle: {0}")]
    TooLarge(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

fn check_n(n: usize) -> Result<(), OracleError> {
    if n > MAX_ORACLE_N {
        return Err(OracleError::TooLarge(format!("n = {n} > {MAX_ORACLE_N}")));
    }
    if n == 0 {
        return Err(OracleError::Invalid("empty input".into()));
    }
    Ok(())
}

/// Half the mean squared difference over all ordered pairs, which equals the
/// population variance.
fn pairwise_variance(xs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &a in xs {
        for &b in xs {
            acc += (a - b) * (a - b);
        }
    }
    acc / (2.0 * (xs.len() * xs.len()) as f64)
}

/// Variance reduction via pairwise differences. Returns `+∞` when every
/// cluster is loss-constant and `NaN` when the loss itself is constant.
pub fn oracle_variance_reduction(labels: &[u32], losses: &[f64]) -> Result<f64, OracleError> {
    check_n(labels.len())?;
    if labels.len() != losses.len() {
        return Err(OracleError::Invalid(
            "labels and losses differ in length".into(),
        ));
    }
    let mut distinct: Vec<u32> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut within = 0.0;
    for &c in &distinct {
        let members: Vec<f64> = labels
            .iter()
            .zip(losses)
            .filter(|(&l, _)| l == c)
            .map(|(_, &v)| v)
            .collect();
        within += pairwise_variance(&members);
    }
    let within = within / distinct.len() as f64;
    let total = pairwise_variance(losses);
    if total == 0.0 {
        return Ok(f64::NAN);
    }
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(total / within)
}

/// Greedy complete-linkage agglomeration over a full linkage matrix, always
/// merging the closest pair (ties by lower cluster ids), stopping once the
/// closest pair is farther than `epsilon`. Labels are dense in order of each
/// cluster's smallest member.
pub fn oracle_complete_linkage(x: &EmbeddingMatrix, epsilon: f64) -> Result<Vec<u32>, OracleError> {
    let n = x.n();
    check_n(n)?;
    let mut link = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            link[i][j] = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(&a, &b)| {
                    let t = f64::from(a) - f64::from(b);
                    t * t
                })
                .sum();
        }
    }
    // owner[p] = index of the cluster (its smallest member) holding point p
    let mut owner: Vec<usize> = (0..n).collect();
    let mut active = vec![true; n];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && best.is_none_or(|b| link[i][j] < b.0) {
                    best = Some((link[i][j], i, j));
                }
            }
        }
        match best {
            Some((h, i, j)) if h <= epsilon => {
                active[j] = false;
                for k in 0..n {
                    let m = link[i][k].max(link[j][k]);
                    link[i][k] = m;
                    link[k][i] = m;
                }
                for o in owner.iter_mut() {
                    if *o == j {
                        *o = i;
                    }
                }
            }
            _ => break,
        }
    }
    let mut dense = vec![u32::MAX; n];
    let mut next = 0;
    Ok(owner
        .iter()
        .map(|&o| {
            if dense[o] == u32::MAX {
                dense[o] = next;
                next += 1;
            }
            dense[o]
        })
        .collect())
}

/// Top-`k` principal directions of the standardized sample (population
/// moments; zero-variance dimensions left unscaled), via cyclic Jacobi
/// rotations on the covariance matrix.
#[derive(Debug, Clone)]
pub struct OraclePca {
    /// `k` unit vectors, each of length `d`.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Fraction of total variance captured by each returned component.
    pub explained_ratio: Vec<f64>,
}

pub fn oracle_pca(sample: &EmbeddingMatrix, k: usize) -> Result<OraclePca, OracleError> {
    let (n, d) = (sample.n(), sample.d());
    check_n(n)?;
    if d > MAX_ORACLE_PCA_DIM {
        return Err(OracleError::TooLarge(format!(
            "d = {d} > {MAX_ORACLE_PCA_DIM}"
        )));
    }
    if k == 0 || k > d {
        return Err(OracleError::Invalid(format!("k = {k} outside [1, {d}]")));
    }
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| f64::from(sample.row(i)[j])).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            let sd = if sd <= 1e-10 * mean.abs() || sd == 0.0 {
                1.0
            } else {
                sd
            };
            col.iter().map(|v| (v - mean) / sd).collect()
        })
        .collect();
    let mut a = vec![vec![0.0f64; d]; d];
    for p in 0..d {
        for q in 0..d {
            a[p][q] = cols[p]
                .iter()
                .zip(&cols[q])
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / n as f64;
        }
    }
    let mut v = vec![vec![0.0f64; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| (0..d).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..d {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..d {
                    let (apr, aqr) = (a[p][r], a[q][r]);
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let trace: f64 = (0..d).map(|i| a[i][i]).sum();
    let top = &order[..k];
    Ok(OraclePca {
        components: top
            .iter()
            .map(|&i| v.iter().map(|row| row[i]).collect())
            .collect(),
        eigenvalues: top.iter().map(|&i| a[i][i]).collect(),
        explained_ratio: top
            .iter()
            .map(|&i| if trace > 0.0 { a[i][i] / trace } else { 0.0 })
            .collect(),
    })
}

/// Principal angles (radians, ascending) between the row spaces of two
/// `k × d` bases.
pub fn principal_angles(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let d = qa.first().map_or(0, |r| r.len());
    let m = nalgebra::DMatrix::from_fn(qa.len(), qb.len(), |i, j| {
        (0..d).map(|t| qa[i][t] * qb[j][t]).sum::<f64>()
    });
    let mut angles: Vec<f64> = m
        .singular_values()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(f64::total_cmp);
    angles
}

fn orthonormalize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for r in rows {
        let mut v = r.clone();
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &out {
                let dot: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}
