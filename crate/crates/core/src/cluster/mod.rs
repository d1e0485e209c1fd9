//! Partitions of a corpus: the shared [`Clustering`] type and its CSV
//! format, balanced K-means, and reciprocal agglomerative clustering.

pub mod kmeans;
pub mod rac;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{balanced_kmeans, balanced_kmeans_run, kmeans_sweep, BalanceConfig, KMeansRun};
pub use rac::{
    build_dendrogram, build_dendrogram_with, default_epsilon, epsilon_sweep, max_cluster_diameter,
    rac_cluster, read_dendrogram, write_dendrogram, Dendrogram, EpsilonGrid, Merge, NeighborSearch,
};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid clustering: {0}")]
    Invalid(String),
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("duplicate sweep size {0}")]
    DuplicateSweepSize(usize),
    #[error("avg size {size}: {source}")]
    SweepSize {
        size: usize,
        #[source]
        source: Box<ClusterError>,
    },
    #[error("no epsilon in the grid yields at least {required} clusters (smallest epsilon gives {best})")]
    GridExhausted { required: usize, best: usize },
    #[error("dendrogram file: {0}")]
    Format(String),
    #[error("{path}: {message}")]
    Io {
        path: std::path::PathBuf,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// How a clustering was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Provenance {
    BalancedKmeans {
        avg_size: usize,
        min_factor: f64,
        max_factor: f64,
        seed: u64,
    },
    Rac {
        epsilon: f64,
    },
    Random {
        avg_size: usize,
        seed: u64,
    },
    Planted,
    External,
}

/// A partition of example rows `0..n` into `m` non-empty clusters with dense
/// ids `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    assignments: Vec<u32>,
    num_clusters: usize,
    pub provenance: Provenance,
}

impl Clustering {
    /// Validates that ids are dense and every cluster is non-empty.
    pub fn new(assignments: Vec<u32>, provenance: Provenance) -> Result<Self> {
        if assignments.is_empty() {
            return Err(ClusterError::Invalid("no examples".into()));
        }
        let m = assignments.iter().max().map_or(0, |&c| c as usize + 1);
        let mut seen = vec![false; m];
        for &c in &assignments {
            seen[c as usize] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(ClusterError::Invalid(format!(
                "cluster id {empty} is empty (ids must be dense in [0, {m}))"
            )));
        }
        Ok(Self {
            assignments,
            num_clusters: m,
            provenance,
        })
    }

    /// Relabels arbitrary labels to dense ids in order of first appearance.
    pub fn from_labels<L: std::hash::Hash + Eq + Copy>(
        labels: &[L],
        provenance: Provenance,
    ) -> Result<Self> {
        let mut map = HashMap::new();
        let assignments = labels
            .iter()
            .map(|l| {
                let next = map.len() as u32;
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self::new(assignments, provenance)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0usize; self.num_clusters];
        for &c in &self.assignments {
            s[c as usize] += 1;
        }
        s
    }

    /// Member rows of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m: Vec<Vec<usize>> = self.sizes().into_iter().map(Vec::with_capacity).collect();
        for (i, &c) in self.assignments.iter().enumerate() {
            m[c as usize].push(i);
        }
        m
    }

    /// `(size, number of clusters with that size)`, ascending by size.
    pub fn size_histogram(&self) -> Vec<(usize, usize)> {
        let mut h = std::collections::BTreeMap::new();
        for s in self.sizes() {
            *h.entry(s).or_insert(0usize) += 1;
        }
        h.into_iter().collect()
    }

    /// True when both clusterings induce the same partition of rows.
    pub fn same_partition(&self, other: &Clustering) -> bool {
        if self.len() != other.len() || self.num_clusters != other.num_clusters {
            return false;
        }
        let mut fwd = vec![u32::MAX; self.num_clusters];
        for (&a, &b) in self.assignments.iter().zip(&other.assignments) {
            let slot = &mut fwd[a as usize];
            if *slot == u32::MAX {
                *slot = b;
            } else if *slot != b {
                return false;
            }
        }
        // equal cluster counts + consistent forward map ⇒ bijection
        true
    }

    /// True when every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &Clustering) -> bool {
        if self.len() != coarser.len() {
            return false;
        }
        let mut map = vec![u32::MAX; self.num_clusters];
        for (&a, &b) in self.assignments.iter().zip(&coarser.assignments) {
            let slot = &mut map[a as usize];
            if *slot == u32::MAX {
                *slot = b;
            } else if *slot != b {
                return false;
            }
        }
        true
    }
}

/// Writes `example_id,cluster_id` rows in corpus order. `ids` defaults to
/// row indices.
pub fn write_clustering(path: impl AsRef<Path>, c: &Clustering, ids: Option<&[u64]>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: &dyn std::fmt::Display| ClusterError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Some(ids) = ids {
        if ids.len() != c.len() {
            return Err(ClusterError::Invalid(format!(
                "{} ids for {} assignments",
                ids.len(),
                c.len()
            )));
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(&e))?;
    w.write_record(["example_id", "cluster_id"])
        .map_err(|e| io_err(&e))?;
    for (i, &cl) in c.assignments().iter().enumerate() {
        let id = ids.map_or(i as u64, |ids| ids[i]);
        w.write_record([id.to_string(), cl.to_string()])
            .map_err(|e| io_err(&e))?;
    }
    w.flush().map_err(|e| io_err(&e))
}

/// Reads a clustering CSV and aligns it to `ids` (corpus order). Every id
/// must appear exactly once. When `ids` is `None`, example ids must be the
/// row indices `0..n` in any order.
pub fn read_clustering(path: impl AsRef<Path>, ids: Option<&[u64]>) -> Result<Clustering> {
    let path = path.as_ref();
    let io_err = |e: &dyn std::fmt::Display| ClusterError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(&e))?;
    let headers = r.headers().map_err(|e| io_err(&e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["example_id", "cluster_id"] {
        return Err(ClusterError::Invalid(format!(
            "expected header example_id,cluster_id, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut pairs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(&e))?;
        let parse = |k: usize| -> Result<u64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| ClusterError::Invalid(format!("row {}: bad integer", line + 2)))
        };
        pairs.push((parse(0)?, parse(1)?));
    }
    let owned: Vec<u64>;
    let ids = match ids {
        Some(ids) => ids,
        None => {
            owned = (0..pairs.len() as u64).collect();
            &owned
        }
    };
    let pos: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut labels = vec![None; ids.len()];
    for (id, cl) in pairs {
        let i = *pos
            .get(&id)
            .ok_or_else(|| ClusterError::Invalid(format!("unknown example id {id}")))?;
        if labels[i].replace(cl).is_some() {
            return Err(ClusterError::Invalid(format!(
                "example id {id} listed twice"
            )));
        }
    }
    let labels: Vec<u64> = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| ClusterError::Invalid(format!("example id {} missing", ids[i])))
        })
        .collect::<Result<_>>()?;
    // keep the file's ids when they are already dense, otherwise relabel
    let dense: Option<Vec<u32>> = labels.iter().map(|&l| u32::try_from(l).ok()).collect();
    match dense.map(|a| Clustering::new(a, Provenance::External)) {
        Some(Ok(c)) => Ok(c),
        _ => Clustering::from_labels(&labels, Provenance::External),
    }
}
