//! Variance reduction of pretraining losses and cluster purity over data
//! sources, plus the sweeps and report rows that feed the figure emitters.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Clustering, Provenance};
use crate::corpus::LossTable;
use crate::distance::CompensatedSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("degenerate: constant loss")]
    ConstantLoss,
    #[error("all clusters loss-constant (variance reduction is infinite)")]
    Infinite,
    #[error("clustering covers {clustering} examples but {values} values were given")]
    Coverage { clustering: usize, values: usize },
    #[error("non-finite loss at example {0}")]
    NonFinite(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Values laid out cluster by cluster, with `offsets[c]..offsets[c + 1]`
/// covering cluster `c`.
fn group_by_cluster<T: Copy + Default>(c: &Clustering, values: &[T]) -> (Vec<usize>, Vec<T>) {
    let mut offsets = vec![0usize; c.num_clusters() + 1];
    for &a in c.assignments() {
        offsets[a as usize + 1] += 1;
    }
    for k in 1..offsets.len() {
        offsets[k] += offsets[k - 1];
    }
    let mut fill = offsets.clone();
    let mut out = vec![T::default(); values.len()];
    for (&a, &v) in c.assignments().iter().zip(values) {
        out[fill[a as usize]] = v;
        fill[a as usize] += 1;
    }
    (offsets, out)
}

/// Population variance. Exactly zero when all values are equal.
fn population_variance(xs: &[f64]) -> f64 {
    if xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n;
    xs.iter()
        .map(|&x| (x - mean) * (x - mean))
        .collect::<CompensatedSum>()
        .value()
        / n
}

fn check_inputs(c: &Clustering, values: &[f64]) -> Result<()> {
    if c.len() != values.len() {
        return Err(MetricsError::Coverage {
            clustering: c.len(),
            values: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(())
}

fn cluster_variances(c: &Clustering, values: &[f64]) -> Vec<f64> {
    let (offsets, grouped) = group_by_cluster(c, values);
    (0..c.num_clusters())
        .into_par_iter()
        .with_min_len(256)
        .map(|k| population_variance(&grouped[offsets[k]..offsets[k + 1]]))
        .collect()
}

fn ratio(total: f64, within: &[f64]) -> Result<f64> {
    if total == 0.0 {
        return Err(MetricsError::ConstantLoss);
    }
    let mean_within =
        within.iter().copied().collect::<CompensatedSum>().value() / within.len() as f64;
    if mean_within == 0.0 {
        return Err(MetricsError::Infinite);
    }
    Ok(total / mean_within)
}

/// Overall population variance of the losses divided by the uniform average
/// over clusters of within-cluster population variance. Singletons count as
/// zero-variance clusters.
pub fn variance_reduction(c: &Clustering, losses: &LossTable) -> Result<f64> {
    variance_reduction_values(c, &losses.values)
}

pub fn variance_reduction_values(c: &Clustering, values: &[f64]) -> Result<f64> {
    check_inputs(c, values)?;
    let total = population_variance(values);
    if total == 0.0 {
        return Err(MetricsError::ConstantLoss);
    }
    ratio(total, &cluster_variances(c, values))
}

/// Like [`variance_reduction_values`], but averages within-cluster variance
/// over `num_clusters` clusters drawn uniformly without replacement. The
/// overall variance still uses every example.
pub fn variance_reduction_sampled(
    c: &Clustering,
    values: &[f64],
    num_clusters: usize,
    seed: u64,
) -> Result<f64> {
    check_inputs(c, values)?;
    if num_clusters == 0 {
        return Err(MetricsError::InvalidParameter(
            "cluster sample size must be positive".into(),
        ));
    }
    if num_clusters >= c.num_clusters() {
        return variance_reduction_values(c, values);
    }
    let total = population_variance(values);
    if total == 0.0 {
        return Err(MetricsError::ConstantLoss);
    }
    let all = cluster_variances(c, values);
    let mut picked = sample(
        &mut ChaCha8Rng::seed_from_u64(seed),
        all.len(),
        num_clusters,
    )
    .into_vec();
    picked.sort_unstable();
    let within: Vec<f64> = picked.into_iter().map(|k| all[k]).collect();
    ratio(total, &within)
}

/// Uniform average over clusters of the share held by each cluster's most
/// frequent source.
pub fn cluster_purity(c: &Clustering, sources: &[u32]) -> Result<f64> {
    if c.len() != sources.len() {
        return Err(MetricsError::Coverage {
            clustering: c.len(),
            values: sources.len(),
        });
    }
    let (offsets, grouped) = group_by_cluster(c, sources);
    let shares: Vec<(f64, f64)> = (0..c.num_clusters())
        .into_par_iter()
        .with_min_len(256)
        .map(|k| {
            let mut m = grouped[offsets[k]..offsets[k + 1]].to_vec();
            m.sort_unstable();
            let (mut best, mut run) = (0usize, 0usize);
            for i in 0..m.len() {
                run = if i > 0 && m[i] == m[i - 1] {
                    run + 1
                } else {
                    1
                };
                best = best.max(run);
            }
            let (best, len) = (best as f64, m.len() as f64);
            let share = best / len;
            // exact remainder of the division, so the sum below rounds once
            (share, (-share).mul_add(len, best) / len)
        })
        .collect();
    let mut sum = CompensatedSum::default();
    for (share, residual) in shares {
        sum.add(share);
        sum.add(residual);
    }
    Ok(sum.value() / c.num_clusters() as f64)
}

/// Adjusted Rand index between two partitions of the same rows.
pub fn adjusted_rand_index(a: &Clustering, b: &Clustering) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::Coverage {
            clustering: a.len(),
            values: b.len(),
        });
    }
    let pairs = |x: f64| x * (x - 1.0) / 2.0;
    let mut cells: Vec<(u32, u32)> = a
        .assignments()
        .iter()
        .copied()
        .zip(b.assignments().iter().copied())
        .collect();
    cells.sort_unstable();
    let mut index = 0.0;
    let mut k = 0;
    while k < cells.len() {
        let start = k;
        while k < cells.len() && cells[k] == cells[start] {
            k += 1;
        }
        index += pairs((k - start) as f64);
    }
    let sa: f64 = a.sizes().iter().map(|&s| pairs(s as f64)).sum();
    let sb: f64 = b.sizes().iter().map(|&s| pairs(s as f64)).sum();
    let expected = sa * sb / pairs(a.len() as f64);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// The clustering parameter on the x-axis of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterParam {
    AvgSize(usize),
    Epsilon(f64),
}

impl ClusterParam {
    pub fn from_provenance(p: &Provenance) -> Option<Self> {
        match *p {
            Provenance::BalancedKmeans { avg_size, .. } | Provenance::Random { avg_size, .. } => {
                Some(Self::AvgSize(avg_size))
            }
            Provenance::Rac { epsilon } => Some(Self::Epsilon(epsilon)),
            Provenance::Planted | Provenance::External => None,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Self::AvgSize(s) => s as f64,
            Self::Epsilon(e) => e,
        }
    }
}

impl std::fmt::Display for ClusterParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::AvgSize(s) => write!(f, "{s}"),
            Self::Epsilon(e) => write!(f, "{e}"),
        }
    }
}

/// Variance reduction for one cell, keeping degeneracies as flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VrOutcome {
    Value { value: f64 },
    ConstantLoss,
    Infinite,
}

impl VrOutcome {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Self::Value { value } => Some(value),
            _ => None,
        }
    }

    pub fn flag(&self) -> &'static str {
        match self {
            Self::Value { .. } => "",
            Self::ConstantLoss => "constant_loss",
            Self::Infinite => "infinite",
        }
    }

    fn from_result(r: Result<f64>) -> Result<Self> {
        match r {
            Ok(value) => Ok(Self::Value { value }),
            Err(MetricsError::ConstantLoss) => Ok(Self::ConstantLoss),
            Err(MetricsError::Infinite) => Ok(Self::Infinite),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub param: ClusterParam,
    pub step: u64,
    pub variance_reduction: VrOutcome,
    pub purity: Option<f64>,
    pub num_clusters: usize,
    /// `(size, count)` pairs, ascending by size.
    pub size_histogram: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

/// One clustering to evaluate, tagged with the embedding model and the
/// sweep parameter that produced it.
#[derive(Debug, Clone, Copy)]
pub struct SweepEntry<'a> {
    pub model: &'a str,
    pub param: ClusterParam,
    pub clustering: &'a Clustering,
}

/// Evaluates every clustering at every checkpoint. Rows are ordered by entry,
/// then by step. Degenerate cells are flagged, not fatal.
pub fn checkpoint_sweep(
    entries: &[SweepEntry<'_>],
    loss_tables: &[LossTable],
    sources: Option<&[u32]>,
) -> Result<MetricsReport> {
    let mut tables: Vec<&LossTable> = loss_tables.iter().collect();
    tables.sort_by_key(|t| t.step);
    if tables.windows(2).any(|w| w[0].step == w[1].step) {
        return Err(MetricsError::InvalidParameter(
            "duplicate checkpoint step".into(),
        ));
    }
    let mut rows = Vec::with_capacity(entries.len() * tables.len());
    for e in entries {
        let purity = sources
            .map(|s| cluster_purity(e.clustering, s))
            .transpose()?;
        let hist = e.clustering.size_histogram();
        for t in &tables {
            rows.push(MetricsRow {
                model: e.model.to_string(),
                param: e.param,
                step: t.step,
                variance_reduction: VrOutcome::from_result(variance_reduction(e.clustering, t))?,
                purity,
                num_clusters: e.clustering.num_clusters(),
                size_histogram: hist.clone(),
            });
        }
    }
    Ok(MetricsReport { rows })
}

pub const REPORT_CSV_HEADER: [&str; 6] = [
    "model",
    "avg_size_or_eps",
    "step",
    "variance_reduction",
    "purity",
    "num_clusters",
];

impl MetricsReport {
    /// CSV with [`REPORT_CSV_HEADER`]. Degenerate VR and missing purity are
    /// written as empty cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let io = |e: csv::Error| MetricsError::Io(format!("{}: {e}", path.as_ref().display()));
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(io)?;
        w.write_record(REPORT_CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.param.to_string(),
                r.step.to_string(),
                r.variance_reduction
                    .value()
                    .map_or(String::new(), |v| v.to_string()),
                r.purity.map_or(String::new(), |v| v.to_string()),
                r.num_clusters.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| MetricsError::Io(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| MetricsError::Io(e.to_string()))?;
        std::fs::write(path.as_ref(), text + "\n")
            .map_err(|e| MetricsError::Io(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| MetricsError::Io(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clustering(a: Vec<u32>) -> Clustering {
        Clustering::new(a, Provenance::External).unwrap()
    }

    fn double_loop_vr(labels: &[u32], losses: &[f64]) -> f64 {
        let n = losses.len() as f64;
        let mut total = 0.0;
        for &a in losses {
            for &b in losses {
                total += (a - b) * (a - b);
            }
        }
        let total = total / (2.0 * n * n);
        let m = *labels.iter().max().unwrap() as usize + 1;
        let mut within = 0.0;
        for k in 0..m {
            let xs: Vec<f64> = (0..losses.len())
                .filter(|&i| labels[i] as usize == k)
                .map(|i| losses[i])
                .collect();
            let s = xs.len() as f64;
            let mut v = 0.0;
            for &a in &xs {
                for &b in &xs {
                    v += (a - b) * (a - b);
                }
            }
            within += v / (2.0 * s * s);
        }
        total / (within / m as f64)
    }

    #[test]
    fn hand_example() {
        let c = clustering(vec![0, 0, 1, 1]);
        let vr = variance_reduction_values(&c, &[0.0, 1.0, 10.0, 11.0]).unwrap();
        assert!((vr - 101.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_one() {
        let c = clustering(vec![0; 5]);
        let vr = variance_reduction_values(&c, &[0.3, 1.7, 2.2, -4.0, 9.5]).unwrap();
        assert!((vr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degeneracies() {
        let c = clustering(vec![0, 0, 1, 1]);
        assert_eq!(
            variance_reduction_values(&c, &[0.1; 4]),
            Err(MetricsError::ConstantLoss)
        );
        assert_eq!(
            variance_reduction_values(&c, &[0.1, 0.1, 0.7, 0.7]),
            Err(MetricsError::Infinite)
        );
        let singletons = clustering(vec![0, 1, 2]);
        assert_eq!(
            variance_reduction_values(&singletons, &[1.0, 2.0, 3.0]),
            Err(MetricsError::Infinite)
        );
        assert!(matches!(
            variance_reduction_values(&c, &[1.0, 2.0]),
            Err(MetricsError::Coverage { .. })
        ));
    }

    #[test]
    fn singletons_count_with_zero_variance() {
        // clusters {0,1} (var 0.25) and {2} (var 0) -> denominator 0.125
        let c = clustering(vec![0, 0, 1]);
        let xs = [0.0, 1.0, 5.0];
        let total = population_variance(&xs);
        let vr = variance_reduction_values(&c, &xs).unwrap();
        assert!((vr - total / 0.125).abs() < 1e-12);
    }

    #[test]
    fn purity_examples() {
        // A = 0, B = 1
        let c = clustering(vec![0, 0, 0, 1, 1, 1]);
        let p = cluster_purity(&c, &[0, 0, 1, 1, 1, 1]).unwrap();
        assert_eq!(p, 5.0 / 6.0);
        let thirds = clustering(vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(
            cluster_purity(&thirds, &[0, 1, 2, 0, 1, 2, 0, 1, 2]).unwrap(),
            1.0 / 3.0
        );
        assert_eq!(cluster_purity(&c, &[3; 6]).unwrap(), 1.0);
        let singles = clustering((0..6).collect());
        assert_eq!(cluster_purity(&singles, &[0, 1, 2, 0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn ari_identity_and_relabeling() {
        let a = clustering(vec![0, 0, 1, 1, 2, 2]);
        let b = clustering(vec![2, 2, 0, 0, 1, 1]);
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = clustering(vec![0, 1, 0, 1, 0, 1]);
        assert!(adjusted_rand_index(&a, &c).unwrap() < 0.1);
    }

    #[test]
    fn sampled_uses_subset() {
        let c = clustering(vec![0, 0, 1, 1, 2, 2]);
        let xs = [0.0, 1.0, 10.0, 11.0, 3.0, 7.0];
        let full = variance_reduction_values(&c, &xs).unwrap();
        assert_eq!(variance_reduction_sampled(&c, &xs, 10, 0).unwrap(), full);
        let a = variance_reduction_sampled(&c, &xs, 2, 4).unwrap();
        assert_eq!(a, variance_reduction_sampled(&c, &xs, 2, 4).unwrap());
    }

    #[test]
    fn sweep_isolates_degenerate_cells() {
        let c = Clustering::new(
            vec![0, 0, 1, 1],
            Provenance::BalancedKmeans {
                avg_size: 2,
                min_factor: 0.5,
                max_factor: 5.0,
                seed: 0,
            },
        )
        .unwrap();
        let tables = vec![
            LossTable {
                step: 20,
                values: vec![1.0; 4],
            },
            LossTable {
                step: 10,
                values: vec![0.0, 1.0, 10.0, 11.0],
            },
            LossTable {
                step: 30,
                values: vec![0.0, 2.0, 10.0, 11.0],
            },
        ];
        let entry = SweepEntry {
            model: "m",
            param: ClusterParam::from_provenance(&c.provenance).unwrap(),
            clustering: &c,
        };
        let r = checkpoint_sweep(&[entry], &tables, Some(&[0, 0, 1, 0])).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(
            r.rows.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![10, 20, 30]
        );
        assert_eq!(r.rows[1].variance_reduction, VrOutcome::ConstantLoss);
        assert_eq!(r.rows[0].variance_reduction.value(), Some(101.0));
        assert!(r.rows[2].variance_reduction.value().is_some());
        assert_eq!(r.rows[0].purity, Some(0.75));

        let dir = tempfile::tempdir().unwrap();
        r.write_csv(dir.path().join("m.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,avg_size_or_eps,step,variance_reduction,purity,num_clusters"
        );
        assert_eq!(lines.next().unwrap(), "m,2,10,101,0.75,2");
        assert_eq!(lines.next().unwrap(), "m,2,20,,0.75,2");
        r.write_json(dir.path().join("m.json")).unwrap();
        assert_eq!(
            MetricsReport::read_json(dir.path().join("m.json")).unwrap(),
            r
        );
    }

    proptest! {
        #[test]
        fn matches_double_loop(
            labels in prop::collection::vec(0u32..6, 2..80),
            losses in prop::collection::vec(-50.0f64..50.0, 80),
        ) {
            let c = Clustering::from_labels(&labels, Provenance::External).unwrap();
            let xs = &losses[..labels.len()];
            match variance_reduction_values(&c, xs) {
                Ok(vr) => {
                    let want = double_loop_vr(c.assignments(), xs);
                    prop_assert!(((vr - want) / want).abs() < 1e-9, "{} vs {}", vr, want);
                }
                Err(MetricsError::Infinite) => {}
                Err(e) => prop_assert!(false, "unexpected {:?}", e),
            }
        }

        #[test]
        fn affine_and_relabel_invariance(
            labels in prop::collection::vec(0u32..4, 4..60),
            losses in prop::collection::vec(-5.0f64..5.0, 60),
            a in prop_oneof![-3.0f64..-0.25, 0.25f64..3.0],
            b in -10.0f64..10.0,
        ) {
            let c = Clustering::from_labels(&labels, Provenance::External).unwrap();
            let xs = &losses[..labels.len()];
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let relabeled: Vec<u32> = labels.iter().map(|l| 3 - l).collect();
            let c2 = Clustering::from_labels(&relabeled, Provenance::External).unwrap();
            if let Ok(v) = variance_reduction_values(&c, xs) {
                let w = variance_reduction_values(&c, &ys).unwrap();
                prop_assert!(((v - w) / v).abs() < 1e-9);
                let r = variance_reduction_values(&c2, xs).unwrap();
                prop_assert!(((v - r) / v).abs() < 1e-12);
            }
        }

        #[test]
        fn purity_bounds_and_source_permutation(
            labels in prop::collection::vec(0u32..8, 1..100),
            srcs in prop::collection::vec(0u32..4, 100),
        ) {
            let c = Clustering::from_labels(&labels, Provenance::External).unwrap();
            let s = &srcs[..labels.len()];
            let p = cluster_purity(&c, s).unwrap();
            prop_assert!((0.25 - 1e-12..=1.0 + 1e-12).contains(&p));
            let permuted: Vec<u32> = s.iter().map(|&x| (x + 1) % 4).collect();
            prop_assert_eq!(p, cluster_purity(&c, &permuted).unwrap());
        }
    }
}
