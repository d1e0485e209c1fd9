//! Balanced K-means under squared-L2 distance with per-cluster size bounds.
//!
//! Seeding is greedy k-means++ (several D²-sampled candidates per step, the
//! one that lowers the potential most wins). Each Lloyd assignment step gives
//! every point its nearest centroid unless that would overflow a cluster, in
//! which case points are placed greedily in order of regret
//! (`d(best) − d(second best)`, most negative first) into the nearest
//! centroid with remaining capacity. After the iterations, clusters below
//! the minimum size take their nearest points from clusters that can spare
//! them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClusterError, Clustering, Provenance, Result};
use crate::corpus::EmbeddingMatrix;
use crate::distance::{sq_dist_f32, sq_norm_f32};

const GEMM_ROWS: usize = 256;
const SEED_BLOCK: usize = 1024;
/// Relative threshold under which GEMM distance estimates are recomputed.
const EXACT_BELOW: f32 = 1e-3;
// seeding runs on a uniform sample of this many points per centroid once the
// data is larger than that
const SEED_SAMPLE_PER_CENTROID: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConfig {
    pub avg_size: usize,
    pub min_factor: f64,
    pub max_factor: f64,
    pub seed: u64,
    pub max_iters: usize,
    /// Candidates per greedy k-means++ step; `None` uses `2 + ⌊ln m⌋`.
    pub init_trials: Option<usize>,
}

impl BalanceConfig {
    pub fn new(avg_size: usize, seed: u64) -> Self {
        Self {
            avg_size,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.avg_size == 0 {
            return Err(ClusterError::InvalidParameter(
                "avg_size must be positive".into(),
            ));
        }
        if !(self.min_factor > 0.0 && self.min_factor <= 1.0) {
            return Err(ClusterError::InvalidParameter(format!(
                "min_factor must lie in (0, 1], got {}",
                self.min_factor
            )));
        }
        if !(self.max_factor >= 1.0 && self.max_factor.is_finite()) {
            return Err(ClusterError::InvalidParameter(format!(
                "max_factor must be >= 1, got {}",
                self.max_factor
            )));
        }
        if self.min_factor * (self.avg_size as f64) < 1.0 - 1e-9 {
            return Err(ClusterError::InvalidParameter(format!(
                "min_factor * avg_size = {} < 1",
                self.min_factor * self.avg_size as f64
            )));
        }
        if self.max_iters == 0 {
            return Err(ClusterError::InvalidParameter(
                "max_iters must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of clusters for `n` points: `round(n / avg_size)`, at least 1.
    pub fn num_clusters(&self, n: usize) -> usize {
        (((n as f64) / self.avg_size as f64).round() as usize).max(1)
    }

    /// Inclusive size bounds `[⌈min_factor·avg⌉, ⌊max_factor·avg⌋]`, clamped
    /// to `[1, n]`.
    pub fn size_bounds(&self, n: usize) -> (usize, usize) {
        let avg = self.avg_size as f64;
        let lo = ((self.min_factor * avg) - 1e-9).ceil() as usize;
        let hi = ((self.max_factor * avg) + 1e-9).floor() as usize;
        (lo.clamp(1, n), hi.clamp(1, n))
    }
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            avg_size: 50,
            min_factor: 0.2,
            max_factor: 5.0,
            seed: 0,
            max_iters: 50,
            init_trials: None,
        }
    }
}

/// Full result of one balanced K-means run.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub clustering: Clustering,
    /// `m × d` row-major centroids of the final clustering.
    pub centroids: Vec<f32>,
    /// Within-cluster sum of squared distances after each Lloyd iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Points moved by the minimum-size repair.
    pub repaired_points: usize,
}

pub fn balanced_kmeans(x: &EmbeddingMatrix, cfg: &BalanceConfig) -> Result<Clustering> {
    balanced_kmeans_run(x, cfg).map(|r| r.clustering)
}

pub fn balanced_kmeans_run(x: &EmbeddingMatrix, cfg: &BalanceConfig) -> Result<KMeansRun> {
    cfg.validate()?;
    let n = x.n();
    if n < cfg.avg_size {
        return Err(ClusterError::Infeasible(format!(
            "{n} points but avg_size {}",
            cfg.avg_size
        )));
    }
    let m = cfg.num_clusters(n);
    let (min_size, max_size) = cfg.size_bounds(n);
    if m * min_size > n || m * max_size < n {
        return Err(ClusterError::Infeasible(format!(
            "{m} clusters with sizes in [{min_size}, {max_size}] cannot hold {n} points"
        )));
    }
    if x.rows().any(|r| (sq_norm_f32(r) - 1.0).abs() > 1e-3) {
        log::warn!("balanced k-means input rows are not unit-normalized");
    }
    let provenance = Provenance::BalancedKmeans {
        avg_size: cfg.avg_size,
        min_factor: cfg.min_factor,
        max_factor: cfg.max_factor,
        seed: cfg.seed,
    };
    let d = x.d();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    if m == 1 {
        let centroids = centroid_means(x, &vec![0; n], 1);
        let obj = objective(x, &centroids, &vec![0; n]);
        return Ok(KMeansRun {
            clustering: Clustering::new(vec![0; n], provenance)?,
            centroids,
            objective_history: vec![obj],
            iterations: 0,
            converged: true,
            repaired_points: 0,
        });
    }

    let trials = cfg
        .init_trials
        .unwrap_or_else(|| 2 + (m as f64).ln().floor() as usize)
        .max(1);
    let seeds = if n > SEED_SAMPLE_PER_CENTROID * m {
        let mut sample =
            rand::seq::index::sample(&mut rng, n, SEED_SAMPLE_PER_CENTROID * m).into_vec();
        sample.sort_unstable();
        let sub = x
            .select_rows(&sample)
            .map_err(|e| ClusterError::Invalid(e.to_string()))?;
        kmeans_pp(&sub, m, trials, &mut rng)
            .into_iter()
            .map(|i| sample[i])
            .collect()
    } else {
        kmeans_pp(x, m, trials, &mut rng)
    };
    let mut centroids: Vec<f32> = seeds
        .iter()
        .flat_map(|&i| x.row(i).iter().copied())
        .collect();

    let mut assign: Option<Vec<u32>> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut next = constrained_assignment(x, &centroids, m, max_size);
        repair_empty(x, &mut centroids, &mut next, m);
        if let Some(prev) = &assign {
            if *prev == next {
                converged = true;
                break;
            }
            let before = *history.last().unwrap();
            if objective(x, &centroids, &next) > before {
                // greedy placement cannot improve on the current assignment
                converged = true;
                break;
            }
        }
        centroids = centroid_means(x, &next, m);
        history.push(objective(x, &centroids, &next));
        assign = Some(next);
    }
    let mut assign = assign.expect("at least one iteration");
    centroids = centroid_means(x, &assign, m);

    let repaired_points = repair_min_size(x, &centroids, &mut assign, m, min_size);
    if repaired_points > 0 {
        centroids = centroid_means(x, &assign, m);
    }

    let clustering = Clustering::new(assign, provenance)?;
    debug_assert!(clustering
        .sizes()
        .iter()
        .all(|&s| s >= min_size && s <= max_size));
    debug_assert_eq!(centroids.len(), m * d);
    Ok(KMeansRun {
        clustering,
        centroids,
        objective_history: history,
        iterations,
        converged,
        repaired_points,
    })
}

/// Runs [`balanced_kmeans`] once per average size. Each run is seeded from
/// `(seed, size)`.
pub fn kmeans_sweep(
    x: &EmbeddingMatrix,
    avg_sizes: &[usize],
    seed: u64,
    template: &BalanceConfig,
) -> Result<Vec<Clustering>> {
    let mut seen = std::collections::HashSet::new();
    for &s in avg_sizes {
        if !seen.insert(s) {
            return Err(ClusterError::DuplicateSweepSize(s));
        }
    }
    avg_sizes
        .iter()
        .map(|&size| {
            let cfg = BalanceConfig {
                avg_size: size,
                seed: sweep_seed(seed, size),
                ..template.clone()
            };
            balanced_kmeans(x, &cfg).map_err(|e| ClusterError::SweepSize {
                size,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Per-size seed derived with SplitMix64 so sizes get independent streams.
pub fn sweep_seed(seed: u64, size: usize) -> u64 {
    let mut z = seed ^ (size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn objective(x: &EmbeddingMatrix, centroids: &[f32], assign: &[u32]) -> f64 {
    let d = x.d();
    let parts: Vec<f64> = assign
        .par_chunks(4096)
        .enumerate()
        .map(|(c, chunk)| {
            chunk
                .iter()
                .enumerate()
                .map(|(r, &a)| {
                    let i = c * 4096 + r;
                    let a = a as usize;
                    f64::from(sq_dist_f32(x.row(i), &centroids[a * d..(a + 1) * d]))
                })
                .sum()
        })
        .collect();
    parts.iter().sum()
}

fn centroid_means(x: &EmbeddingMatrix, assign: &[u32], m: usize) -> Vec<f32> {
    let d = x.d();
    let mut sums = vec![0.0f64; m * d];
    let mut counts = vec![0usize; m];
    for (i, &a) in assign.iter().enumerate() {
        let a = a as usize;
        counts[a] += 1;
        for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(x.row(i)) {
            *s += f64::from(v);
        }
    }
    sums.chunks_exact(d)
        .zip(&counts)
        .flat_map(|(s, &c)| {
            let inv = 1.0 / c.max(1) as f64;
            s.iter().map(move |v| (v * inv) as f32)
        })
        .collect()
}

#[derive(Clone, Copy)]
struct NearestTwo {
    best: u32,
    d1: f32,
    d2: f32,
}

/// Best and second-best centroid for every row via blocked `‖x‖² + ‖c‖² − 2x·c`.
fn nearest_two(x: &EmbeddingMatrix, centroids: &[f32], m: usize) -> Vec<NearestTwo> {
    let d = x.d();
    let cnorm: Vec<f32> = centroids.chunks_exact(d).map(sq_norm_f32).collect();
    let n = x.n();
    let blocks: Vec<Vec<NearestTwo>> = (0..n.div_ceil(GEMM_ROWS))
        .into_par_iter()
        .map(|b| {
            let start = b * GEMM_ROWS;
            let rows = (n - start).min(GEMM_ROWS);
            let mut dots = vec![0.0f32; rows * m];
            let xs = &x.as_slice()[start * d..(start + rows) * d];
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    d,
                    m,
                    1.0,
                    xs.as_ptr(),
                    d as isize,
                    1,
                    centroids.as_ptr(),
                    1,
                    d as isize,
                    0.0,
                    dots.as_mut_ptr(),
                    m as isize,
                    1,
                );
            }
            (0..rows)
                .map(|r| {
                    let xn = sq_norm_f32(&xs[r * d..(r + 1) * d]);
                    let mut best = (0u32, f32::INFINITY);
                    let mut second = f32::INFINITY;
                    for (j, (&dot, &cn)) in dots[r * m..(r + 1) * m].iter().zip(&cnorm).enumerate()
                    {
                        let dist = (xn + cn - 2.0 * dot).max(0.0);
                        if dist < best.1 {
                            second = best.1;
                            best = (j as u32, dist);
                        } else if dist < second {
                            second = dist;
                        }
                    }
                    NearestTwo {
                        best: best.0,
                        d1: best.1,
                        d2: second,
                    }
                })
                .collect()
        })
        .collect();
    blocks.into_iter().flatten().collect()
}

fn constrained_assignment(
    x: &EmbeddingMatrix,
    centroids: &[f32],
    m: usize,
    cap: usize,
) -> Vec<u32> {
    let near = nearest_two(x, centroids, m);
    let mut counts = vec![0usize; m];
    for nt in &near {
        counts[nt.best as usize] += 1;
    }
    if counts.iter().all(|&c| c <= cap) {
        return near.iter().map(|nt| nt.best).collect();
    }
    let d = x.d();
    let mut order: Vec<usize> = (0..near.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = near[a].d1 - near[a].d2;
        let rb = near[b].d1 - near[b].d2;
        ra.total_cmp(&rb).then(a.cmp(&b))
    });
    let mut fill = vec![0usize; m];
    let mut assign = vec![0u32; near.len()];
    for i in order {
        let best = near[i].best as usize;
        let target = if fill[best] < cap {
            best
        } else {
            let row = x.row(i);
            let mut cands: Vec<(f32, usize)> = centroids
                .chunks_exact(d)
                .enumerate()
                .map(|(j, c)| (sq_dist_f32(row, c), j))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands
                .into_iter()
                .map(|(_, j)| j)
                .find(|&j| fill[j] < cap)
                .expect("total capacity covers every point")
        };
        fill[target] += 1;
        assign[i] = target as u32;
    }
    assign
}

/// Gives every empty cluster the point farthest from its own centroid,
/// taken from a cluster with more than one member.
fn repair_empty(x: &EmbeddingMatrix, centroids: &mut [f32], assign: &mut [u32], m: usize) {
    let d = x.d();
    let mut sizes = vec![0usize; m];
    for &a in assign.iter() {
        sizes[a as usize] += 1;
    }
    if sizes.iter().all(|&s| s > 0) {
        return;
    }
    let mut dist: Vec<f32> = (0..x.n())
        .map(|i| {
            let a = assign[i] as usize;
            sq_dist_f32(x.row(i), &centroids[a * d..(a + 1) * d])
        })
        .collect();
    for e in 0..m {
        if sizes[e] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..x.n() {
            if sizes[assign[i] as usize] > 1 && pick.is_none_or(|p| dist[i] > dist[p]) {
                pick = Some(i);
            }
        }
        let p = pick.expect("m <= n leaves a donor");
        sizes[assign[p] as usize] -= 1;
        sizes[e] = 1;
        assign[p] = e as u32;
        dist[p] = 0.0;
        centroids[e * d..(e + 1) * d].copy_from_slice(x.row(p));
    }
}

/// Moves nearest points into every cluster smaller than `min_size` from
/// clusters larger than `min_size`. Returns the number of moved points.
fn repair_min_size(
    x: &EmbeddingMatrix,
    centroids: &[f32],
    assign: &mut [u32],
    m: usize,
    min_size: usize,
) -> usize {
    let d = x.d();
    let mut sizes = vec![0usize; m];
    for &a in assign.iter() {
        sizes[a as usize] += 1;
    }
    let mut moved = 0;
    for c in 0..m {
        if sizes[c] >= min_size {
            continue;
        }
        let centre = &centroids[c * d..(c + 1) * d];
        let mut cands: Vec<(f32, usize)> = (0..x.n())
            .filter(|&i| assign[i] as usize != c)
            .map(|i| (sq_dist_f32(x.row(i), centre), i))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, i) in cands {
            if sizes[c] >= min_size {
                break;
            }
            let from = assign[i] as usize;
            if sizes[from] > min_size {
                sizes[from] -= 1;
                sizes[c] += 1;
                assign[i] = c as u32;
                moved += 1;
            }
        }
    }
    moved
}

/// Greedy k-means++ seeding: each round draws `trials` candidates by D²
/// sampling and keeps the one that lowers the potential most.
fn kmeans_pp(x: &EmbeddingMatrix, m: usize, trials: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.n();
    let norms: Vec<f32> = x.rows().map(sq_norm_f32).collect();
    let first = rng.gen_range(0..n);
    let mut centers = vec![first];
    let mut is_center = vec![false; n];
    is_center[first] = true;
    let mut best = candidate_distances(x, &norms, &[first]);
    let mut block_sums = weight_blocks(&best);

    while centers.len() < m {
        let total: f64 = block_sums.iter().sum();
        if total <= 0.0 {
            // every point coincides with a seed
            let i = (0..n).find(|&i| !is_center[i]).expect("m <= n");
            centers.push(i);
            is_center[i] = true;
            continue;
        }
        let cands: Vec<usize> = (0..trials)
            .map(|_| sample_d2(rng, total, &block_sums, &best))
            .collect();
        let t = cands.len();
        let dist = candidate_distances(x, &norms, &cands);
        let gains: Vec<Vec<f64>> = best
            .par_chunks(SEED_BLOCK)
            .zip(dist.par_chunks(SEED_BLOCK * t))
            .map(|(b, dc)| {
                let mut g = vec![0.0f64; t];
                for (cur, row) in b.iter().zip(dc.chunks_exact(t)) {
                    for (gj, &dn) in g.iter_mut().zip(row) {
                        if dn < *cur {
                            *gj += f64::from(cur - dn);
                        }
                    }
                }
                g
            })
            .collect();
        let mut winner = 0;
        let mut best_gain = f64::NEG_INFINITY;
        for j in 0..t {
            let gain: f64 = gains.iter().map(|g| g[j]).sum();
            if gain > best_gain {
                best_gain = gain;
                winner = j;
            }
        }
        let c = cands[winner];
        best.par_iter_mut()
            .zip(dist.par_chunks(t))
            .with_min_len(SEED_BLOCK)
            .for_each(|(b, row)| *b = b.min(row[winner]));
        best[c] = 0.0;
        block_sums = weight_blocks(&best);
        centers.push(c);
        is_center[c] = true;
    }
    centers
}

/// Per-block sums of D² weights, in block order.
fn weight_blocks(best: &[f32]) -> Vec<f64> {
    best.par_chunks(SEED_BLOCK)
        .map(|b| b.iter().map(|&v| f64::from(v)).sum())
        .collect()
}

fn sample_d2(rng: &mut ChaCha8Rng, total: f64, block_sums: &[f64], best: &[f32]) -> usize {
    let mut r = rng.gen::<f64>() * total;
    let mut blk = block_sums.len() - 1;
    for (j, &s) in block_sums.iter().enumerate() {
        if r < s {
            blk = j;
            break;
        }
        r -= s;
    }
    // rounding can push past the last positive block
    while block_sums[blk] <= 0.0 && blk > 0 {
        blk -= 1;
    }
    let start = blk * SEED_BLOCK;
    let end = (start + SEED_BLOCK).min(best.len());
    let mut last_positive = start;
    for i in start..end {
        let w = f64::from(best[i]);
        if w > 0.0 {
            last_positive = i;
            if r < w {
                return i;
            }
            r -= w;
        }
    }
    last_positive
}

/// `n × cands.len()` row-major squared distances from every row to each
/// candidate row. Near-zero GEMM estimates are recomputed directly so exact
/// duplicates come out as exactly zero.
fn candidate_distances(x: &EmbeddingMatrix, norms: &[f32], cands: &[usize]) -> Vec<f32> {
    let (n, d, t) = (x.n(), x.d(), cands.len());
    let ys: Vec<f32> = cands
        .iter()
        .flat_map(|&c| x.row(c).iter().copied())
        .collect();
    let mut out = vec![0.0f32; n * t];
    out.par_chunks_mut(GEMM_ROWS * t)
        .enumerate()
        .for_each(|(b, block)| {
            let start = b * GEMM_ROWS;
            let rows = block.len() / t;
            let xs = &x.as_slice()[start * d..(start + rows) * d];
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    d,
                    t,
                    1.0,
                    xs.as_ptr(),
                    d as isize,
                    1,
                    ys.as_ptr(),
                    1,
                    d as isize,
                    0.0,
                    block.as_mut_ptr(),
                    t as isize,
                    1,
                );
            }
            for (r, row) in block.chunks_exact_mut(t).enumerate() {
                let i = start + r;
                for (j, v) in row.iter_mut().enumerate() {
                    let c = cands[j];
                    let scale = norms[i] + norms[c];
                    let est = scale - 2.0 * *v;
                    *v = if i == c {
                        0.0
                    } else if est <= EXACT_BELOW * scale {
                        sq_dist_f32(x.row(i), x.row(c))
                    } else {
                        est
                    };
                }
            }
        });
    out
}
