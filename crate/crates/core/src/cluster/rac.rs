//! Reciprocal agglomerative clustering (RAC) with complete linkage.
//!
//! Only pairs of points within `epsilon_max` (squared L2) are ever
//! materialized. Under complete linkage two clusters can merge at a height
//! `≤ epsilon_max` only if every cross pair is within `epsilon_max`, so a
//! cluster pair stays a merge candidate exactly while all of its cross pairs
//! are present; merging keeps the intersection of the two neighbor lists
//! with the larger of the two linkages.
//!
//! Each round, every cluster finds its nearest neighbor and all reciprocal
//! nearest-neighbor pairs merge. Complete linkage is reducible, so this
//! yields the same dendrogram as merging the globally closest pair one at a
//! time, and cutting it at `ε` bounds every cluster's pairwise diameter by
//! `ε`.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;

use super::{ClusterError, Clustering, Provenance, Result};
use crate::corpus::EmbeddingMatrix;
use crate::distance::{sq_dist, sq_dist_bounded, sq_norm_f32};

const DND_MAGIC: &[u8; 4] = b"DND1";
const TILE: usize = 256;

/// Reference ε per embedding model tag, in squared L2 units.
pub fn default_epsilon(model: &str) -> Option<f64> {
    match model.to_ascii_lowercase().as_str() {
        "use" | "gecko" => Some(0.2),
        "bert" | "lm-token-embeds" | "lm_token_embeds" => Some(0.001),
        "lm-output-embeds" | "lm_output_embeds" => Some(0.03),
        _ => None,
    }
}

/// Strictly ascending positive thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGrid(Vec<f64>);

impl EpsilonGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(ClusterError::InvalidParameter("empty epsilon grid".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ClusterError::InvalidParameter(
                "epsilon values must be positive and finite".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ClusterError::InvalidParameter(
                "epsilon grid must be strictly ascending".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn max(&self) -> f64 {
        *self.0.last().unwrap()
    }
}

/// One merge: the clusters represented by points `a < b` joined at
/// complete-linkage distance `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: u32,
    pub b: u32,
    pub height: f64,
}

/// Complete-linkage merge history up to `epsilon_max`, ordered by
/// `(height, a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n: usize,
    epsilon_max: f64,
    merges: Vec<Merge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborSearch {
    /// Every tile pair is evaluated.
    Exhaustive,
    /// Points are sorted along the highest-variance coordinate and tile pairs
    /// whose gap on that coordinate exceeds `sqrt(epsilon_max)` are skipped.
    /// Lossless: a coordinate gap bounds the distance from below.
    #[default]
    SortedWindow,
}

impl Dendrogram {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn epsilon_max(&self) -> f64 {
        self.epsilon_max
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Number of clusters when cutting at `epsilon`.
    pub fn num_clusters_at(&self, epsilon: f64) -> usize {
        self.n - self.merges.partition_point(|m| m.height <= epsilon)
    }

    /// Clusters formed by all merges with height `≤ epsilon`, labelled in
    /// order of their smallest member.
    pub fn cut(&self, epsilon: f64) -> Clustering {
        let mut uf = UnionFind::new(self.n);
        for m in self.merges.iter().take_while(|m| m.height <= epsilon) {
            uf.union(m.a as usize, m.b as usize);
        }
        let mut label = vec![u32::MAX; self.n];
        let mut next = 0u32;
        let assignments = (0..self.n)
            .map(|i| {
                let r = uf.find(i);
                if label[r] == u32::MAX {
                    label[r] = next;
                    next += 1;
                }
                label[r]
            })
            .collect();
        Clustering::new(assignments, Provenance::Rac { epsilon })
            .expect("union-find labels are dense")
    }

    fn from_parts(n: usize, epsilon_max: f64, mut merges: Vec<Merge>) -> Self {
        merges.sort_by(|x, y| {
            x.height
                .total_cmp(&y.height)
                .then(x.a.cmp(&y.a))
                .then(x.b.cmp(&y.b))
        });
        Self {
            n,
            epsilon_max,
            merges,
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Returns false when already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

/// All pairs `(i, j, d)` with `i < j` and squared distance `d ≤ eps`.
///
/// Points are processed in tiles; a GEMM over each tile pair gives f32
/// distance estimates, and every estimate within `eps` plus a bound on the
/// f32 rounding error is rechecked exactly in f64, so no pair is lost.
fn neighbor_pairs(x: &EmbeddingMatrix, eps: f64, search: NeighborSearch) -> Vec<(u32, u32, f64)> {
    let (n, d) = (x.n(), x.d());
    let (order, keys): (Vec<u32>, Option<Vec<f64>>) = match search {
        NeighborSearch::Exhaustive => ((0..n as u32).collect(), None),
        NeighborSearch::SortedWindow => {
            let dim = widest_dimension(x);
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| {
                x.row(a as usize)[dim]
                    .total_cmp(&x.row(b as usize)[dim])
                    .then(a.cmp(&b))
            });
            let keys = order
                .iter()
                .map(|&i| f64::from(x.row(i as usize)[dim]))
                .collect();
            (order, Some(keys))
        }
    };
    let xs: Vec<f32> = order
        .iter()
        .flat_map(|&i| x.row(i as usize).iter().copied())
        .collect();
    let norms: Vec<f32> = xs.chunks_exact(d).map(sq_norm_f32).collect();
    // |fl(‖a‖² + ‖b‖² − 2a·b) − exact| ≤ 2·d·u·(‖a‖² + ‖b‖²) with u = 2⁻²⁴;
    // the slack below is four times that
    let rel_slack = 4.0 * d as f64 * f64::from(f32::EPSILON);
    let tiles = n.div_ceil(TILE);
    let tile_rows = |t: usize| (t * TILE, ((t + 1) * TILE).min(n));
    let chunks: Vec<Vec<(u32, u32, f64)>> = (0..tiles)
        .into_par_iter()
        .map(|ti| {
            let mut out = Vec::new();
            let mut dots = vec![0.0f32; TILE * TILE];
            let (a0, a1) = tile_rows(ti);
            for tj in ti..tiles {
                let (b0, b1) = tile_rows(tj);
                if let Some(k) = &keys {
                    let gap = k[b0] - k[a1 - 1];
                    if gap > 0.0 && gap * gap > eps * (1.0 + 1e-9) {
                        break;
                    }
                }
                let (ra, rb) = (a1 - a0, b1 - b0);
                unsafe {
                    matrixmultiply::sgemm(
                        ra,
                        d,
                        rb,
                        1.0,
                        xs[a0 * d..].as_ptr(),
                        d as isize,
                        1,
                        xs[b0 * d..].as_ptr(),
                        1,
                        d as isize,
                        0.0,
                        dots.as_mut_ptr(),
                        rb as isize,
                        1,
                    );
                }
                for p in a0..a1 {
                    let row = &dots[(p - a0) * rb..(p - a0 + 1) * rb];
                    let q_start = if ti == tj { p + 1 } else { b0 };
                    for q in q_start..b1 {
                        let scale = f64::from(norms[p]) + f64::from(norms[q]);
                        let est = scale - 2.0 * f64::from(row[q - b0]);
                        if est > eps + rel_slack * scale {
                            continue;
                        }
                        let (i, j) = (order[p], order[q]);
                        if let Some(dist) =
                            sq_dist_bounded(x.row(i as usize), x.row(j as usize), eps)
                        {
                            out.push((i.min(j), i.max(j), dist));
                        }
                    }
                }
            }
            out
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

fn widest_dimension(x: &EmbeddingMatrix) -> usize {
    let (n, d) = (x.n() as f64, x.d());
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..d {
        let mean = x.rows().map(|r| f64::from(r[j])).sum::<f64>() / n;
        let var = x
            .rows()
            .map(|r| (f64::from(r[j]) - mean).powi(2))
            .sum::<f64>()
            / n;
        if var > best.1 {
            best = (j, var);
        }
    }
    best.0
}

/// Orders candidate pairs by distance, then by (smaller id, larger id).
#[inline]
fn pair_cmp(c: u32, u: (u32, f64), v: (u32, f64)) -> Ordering {
    u.1.total_cmp(&v.1)
        .then_with(|| (c.min(u.0), c.max(u.0)).cmp(&(c.min(v.0), c.max(v.0))))
}

fn nearest(c: u32, adj: &[(u32, f64)]) -> Option<u32> {
    adj.iter()
        .copied()
        .min_by(|&u, &v| pair_cmp(c, u, v))
        .map(|(id, _)| id)
}

/// Builds the complete-linkage dendrogram restricted to merge heights
/// `≤ epsilon_max`.
pub fn build_dendrogram(x: &EmbeddingMatrix, epsilon_max: f64) -> Result<Dendrogram> {
    build_dendrogram_with(x, epsilon_max, NeighborSearch::default())
}

pub fn build_dendrogram_with(
    x: &EmbeddingMatrix,
    epsilon_max: f64,
    search: NeighborSearch,
) -> Result<Dendrogram> {
    if !(epsilon_max.is_finite() && epsilon_max > 0.0) {
        return Err(ClusterError::InvalidParameter(format!(
            "epsilon_max must be positive and finite, got {epsilon_max}"
        )));
    }
    let n = x.n();
    let pairs = neighbor_pairs(x, epsilon_max, search);
    let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for &(i, j, d) in &pairs {
        adj[i as usize].push((j, d));
        adj[j as usize].push((i, d));
    }
    drop(pairs);
    adj.par_iter_mut()
        .for_each(|a| a.sort_unstable_by_key(|&(id, _)| id));

    let mut nn: Vec<Option<u32>> = vec![None; n];
    let mut dirty: Vec<u32> = (0..n as u32)
        .filter(|&i| !adj[i as usize].is_empty())
        .collect();
    let mut live = dirty.clone();
    let mut is_dirty = vec![false; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while !live.is_empty() {
        let fresh: Vec<(u32, Option<u32>)> = dirty
            .par_iter()
            .map(|&c| (c, nearest(c, &adj[c as usize])))
            .collect();
        for (c, v) in fresh {
            nn[c as usize] = v;
            is_dirty[c as usize] = false;
        }
        dirty.clear();

        let reciprocal: Vec<(u32, u32)> = live
            .iter()
            .filter_map(|&c| {
                let u = nn[c as usize]?;
                (c < u && nn[u as usize] == Some(c)).then_some((c, u))
            })
            .collect();
        debug_assert!(
            !reciprocal.is_empty(),
            "the closest pair is always reciprocal"
        );
        if reciprocal.is_empty() {
            break;
        }

        for (a, b) in reciprocal {
            let (ai, bi) = (a as usize, b as usize);
            let la = std::mem::take(&mut adj[ai]);
            let lb = std::mem::take(&mut adj[bi]);
            let height = la
                .binary_search_by_key(&b, |&(id, _)| id)
                .map(|k| la[k].1)
                .expect("merge partners are adjacent");
            merges.push(Merge { a, b, height });

            let merged = intersect_max(&la, &lb, a, b);
            // neighbors of either side lose `b`; only common neighbors keep `a`
            for &(c, _) in la.iter().chain(lb.iter()) {
                if c == a || c == b {
                    continue;
                }
                let list = &mut adj[c as usize];
                if let Ok(k) = list.binary_search_by_key(&b, |&(id, _)| id) {
                    list.remove(k);
                }
                let keep = merged
                    .binary_search_by_key(&c, |&(id, _)| id)
                    .ok()
                    .map(|k| merged[k].1);
                if let Ok(k) = list.binary_search_by_key(&a, |&(id, _)| id) {
                    match keep {
                        Some(h) => list[k].1 = h,
                        None => {
                            list.remove(k);
                        }
                    }
                }
                if !is_dirty[c as usize] {
                    is_dirty[c as usize] = true;
                    dirty.push(c);
                }
            }
            adj[ai] = merged;
            nn[bi] = None;
            if !is_dirty[ai] {
                is_dirty[ai] = true;
                dirty.push(a);
            }
        }
        dirty.retain(|&c| {
            if adj[c as usize].is_empty() {
                nn[c as usize] = None;
                is_dirty[c as usize] = false;
                false
            } else {
                true
            }
        });
        dirty.sort_unstable();
        live.retain(|&c| !adj[c as usize].is_empty());
    }
    Ok(Dendrogram::from_parts(n, epsilon_max, merges))
}

/// Common neighbors of `a` and `b` (excluding the pair itself) with the
/// larger of the two linkages. Both inputs are sorted by id.
fn intersect_max(la: &[(u32, f64)], lb: &[(u32, f64)], a: u32, b: u32) -> Vec<(u32, f64)> {
    let mut out = Vec::with_capacity(la.len().min(lb.len()));
    let (mut i, mut j) = (0, 0);
    while i < la.len() && j < lb.len() {
        match la[i].0.cmp(&lb[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                let c = la[i].0;
                if c != a && c != b {
                    out.push((c, la[i].1.max(lb[j].1)));
                }
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Clusters whose pairwise squared distances are all `≤ epsilon`.
pub fn rac_cluster(x: &EmbeddingMatrix, epsilon: f64) -> Result<Clustering> {
    Ok(build_dendrogram(x, epsilon)?.cut(epsilon))
}

/// Largest grid value whose cut still has at least `required_clusters`
/// clusters, together with that cut.
pub fn epsilon_sweep(
    dendro: &Dendrogram,
    grid: &EpsilonGrid,
    required_clusters: usize,
) -> Result<(f64, Clustering)> {
    if required_clusters == 0 {
        return Err(ClusterError::InvalidParameter(
            "required_clusters must be positive".into(),
        ));
    }
    if grid.max() > dendro.epsilon_max() {
        return Err(ClusterError::InvalidParameter(format!(
            "grid reaches {} beyond the dendrogram's epsilon_max {}",
            grid.max(),
            dendro.epsilon_max()
        )));
    }
    for &eps in grid.values().iter().rev() {
        if dendro.num_clusters_at(eps) >= required_clusters {
            return Ok((eps, dendro.cut(eps)));
        }
    }
    Err(ClusterError::GridExhausted {
        required: required_clusters,
        best: dendro.num_clusters_at(grid.values()[0]),
    })
}

/// Largest squared distance between members of any one cluster.
pub fn max_cluster_diameter(x: &EmbeddingMatrix, c: &Clustering) -> f64 {
    c.members()
        .par_iter()
        .map(|m| {
            let mut worst = 0.0f64;
            for (k, &i) in m.iter().enumerate() {
                for &j in &m[k + 1..] {
                    worst = worst.max(sq_dist(x.row(i), x.row(j)));
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// `DND1`, `u32` n, `f64` epsilon_max, `u32` merge count, then
/// `(u32 a, u32 b, f64 height)` per merge, little-endian.
pub fn write_dendrogram(path: impl AsRef<Path>, d: &Dendrogram) -> Result<()> {
    let path = path.as_ref();
    let mut b = Vec::with_capacity(20 + d.merges.len() * 16);
    b.extend_from_slice(DND_MAGIC);
    b.extend_from_slice(&(d.n as u32).to_le_bytes());
    b.extend_from_slice(&d.epsilon_max.to_le_bytes());
    b.extend_from_slice(&(d.merges.len() as u32).to_le_bytes());
    for m in &d.merges {
        b.extend_from_slice(&m.a.to_le_bytes());
        b.extend_from_slice(&m.b.to_le_bytes());
        b.extend_from_slice(&m.height.to_le_bytes());
    }
    std::fs::write(path, b).map_err(|e| ClusterError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_dendrogram(path: impl AsRef<Path>) -> Result<Dendrogram> {
    let path = path.as_ref();
    let b = std::fs::read(path).map_err(|e| ClusterError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    decode_dendrogram(&b)
}

fn decode_dendrogram(b: &[u8]) -> Result<Dendrogram> {
    let bad = |m: &str| ClusterError::Format(m.to_string());
    if b.len() < 20 || &b[..4] != DND_MAGIC {
        return Err(bad("bad magic or short header"));
    }
    let n = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
    let epsilon_max = f64::from_le_bytes(b[8..16].try_into().unwrap());
    let count = u32::from_le_bytes(b[16..20].try_into().unwrap()) as usize;
    if n == 0 || !(epsilon_max.is_finite() && epsilon_max > 0.0) {
        return Err(bad("invalid header values"));
    }
    if count >= n.max(1) && count > 0 {
        return Err(bad("more merges than a tree allows"));
    }
    if b.len() != 20 + count * 16 {
        return Err(bad("payload length does not match merge count"));
    }
    let mut uf = UnionFind::new(n);
    let mut merges = Vec::with_capacity(count);
    for rec in b[20..].chunks_exact(16) {
        let a = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let bb = u32::from_le_bytes(rec[4..8].try_into().unwrap());
        let height = f64::from_le_bytes(rec[8..16].try_into().unwrap());
        if a >= bb || bb as usize >= n || !(height >= 0.0 && height <= epsilon_max) {
            return Err(bad("merge record out of range"));
        }
        if !uf.union(a as usize, bb as usize) {
            return Err(bad("merge joins an already joined pair"));
        }
        merges.push(Merge { a, b: bb, height });
    }
    if merges.windows(2).any(|w| w[0].height > w[1].height) {
        return Err(bad("merge heights must be non-decreasing"));
    }
    Ok(Dendrogram::from_parts(n, epsilon_max, merges))
}
