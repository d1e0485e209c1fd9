use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Clustering, Provenance};
use crate::corpus::{Corpus, CorpusError, EmbeddingMatrix, ExampleRecord};

const ROW_CHUNK: usize = 1024;
const NOISE_STREAM: u64 = 1 << 40;
// kept apart from stream 0 so equal seeds do not replay the planted shuffle
const RANDOM_CLUSTERING_STREAM: u64 = 1 << 41;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Parameters of a planted corpus.
///
/// Each example belongs to one of `k_true` equally sized planted clusters.
/// Its embedding is `A·z + e` where `z` is drawn around the cluster's center
/// in a `latent_dim`-dimensional space, `A` is a fixed random `d × latent_dim`
/// map and `e` is isotropic ambient noise. Its loss at every checkpoint is a
/// step-dependent baseline plus a per-cluster offset (spread
/// `sigma_between`) plus independent noise (spread `sigma_within`), so a
/// perfect recovery of the planted clusters gives a variance reduction near
/// `(sigma_between² + sigma_within²) / sigma_within²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub k_true: usize,
    pub latent_dim: usize,
    pub center_spread: f64,
    pub cluster_spread: f64,
    pub ambient_noise: f64,
    pub num_sources: u32,
    /// Probability that an example takes its cluster's dominant source.
    pub source_purity: f64,
    pub sigma_between: f64,
    pub sigma_within: f64,
    /// Share of the per-cluster loss variance explained by a linear function
    /// of the cluster's latent center; the rest is independent per cluster.
    pub loss_smoothness: f64,
    pub base_loss: f64,
    pub steps: Vec<u64>,
    /// Inclusive range of per-example token counts.
    pub token_range: (u64, u64),
    pub duplicate_fraction: f64,
    pub seed: u64,
    pub model_tag: String,
    /// Also emit pure-noise embeddings of the same dimension under this tag.
    pub noise_model_tag: Option<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 10_000,
            d: 256,
            k_true: 200,
            latent_dim: 32,
            center_spread: 1.0,
            cluster_spread: 0.1,
            ambient_noise: 0.5,
            num_sources: 8,
            source_purity: 0.9,
            sigma_between: 3.0,
            sigma_within: 1.0,
            loss_smoothness: 0.5,
            base_loss: 3.0,
            steps: vec![26_000],
            token_range: (32, 1024),
            duplicate_fraction: 0.0,
            seed: 0,
            model_tag: "synthetic".into(),
            noise_model_tag: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Infeasible(m));
        if self.n == 0 || self.d == 0 || self.latent_dim == 0 {
            return bad("n, d and latent_dim must be positive".into());
        }
        if self.k_true == 0 || self.k_true > self.n {
            return bad(format!("k_true must lie in [1, n], got {}", self.k_true));
        }
        if self.num_sources == 0 {
            return bad("num_sources must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.source_purity) {
            return bad(format!(
                "source_purity must lie in [0, 1], got {}",
                self.source_purity
            ));
        }
        for (name, v) in [
            ("center_spread", self.center_spread),
            ("cluster_spread", self.cluster_spread),
            ("ambient_noise", self.ambient_noise),
            ("sigma_between", self.sigma_between),
            ("sigma_within", self.sigma_within),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.loss_smoothness) {
            return bad(format!(
                "loss_smoothness must lie in [0, 1], got {}",
                self.loss_smoothness
            ));
        }
        if !self.base_loss.is_finite() {
            return bad("base_loss must be finite".into());
        }
        if self.token_range.0 == 0 || self.token_range.0 > self.token_range.1 {
            return bad(format!("bad token range {:?}", self.token_range));
        }
        if !(0.0..1.0).contains(&self.duplicate_fraction) {
            return bad(format!(
                "duplicate_fraction must lie in [0, 1), got {}",
                self.duplicate_fraction
            ));
        }
        if 2 * self.num_duplicates() > self.n {
            return bad(format!(
                "{} duplicates need as many distinct originals, but n = {}",
                self.num_duplicates(),
                self.n
            ));
        }
        let mut steps = self.steps.clone();
        steps.sort_unstable();
        steps.dedup();
        if steps.len() != self.steps.len() {
            return bad("checkpoint steps must be distinct".into());
        }
        if self.noise_model_tag.as_deref() == Some(self.model_tag.as_str()) {
            return bad("noise_model_tag must differ from model_tag".into());
        }
        Ok(())
    }

    pub fn num_duplicates(&self) -> usize {
        (self.duplicate_fraction * self.n as f64).round() as usize
    }

    /// Loss baseline at a checkpoint; decreases with training.
    pub fn baseline_loss(&self, step: u64) -> f64 {
        self.base_loss * (1.0 + 1000.0 / (step as f64 + 1000.0))
    }

    /// Variance reduction of a perfect recovery in the large-n limit.
    pub fn expected_variance_reduction(&self) -> f64 {
        let (b, w) = (self.sigma_between, self.sigma_within);
        (b * b + w * w) / (w * w)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub planted: Clustering,
    /// `(original row, copy row)` for every exact duplicate, ordered by copy.
    pub duplicates: Vec<(usize, usize)>,
}

fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a planted corpus. Bit-identical for equal specs, independent of
/// the thread count.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let (n, d, r, k) = (spec.n, spec.d, spec.latent_dim, spec.k_true);
    let mut rng = chunk_rng(spec.seed, 0);

    let mut labels: Vec<u32> = (0..n).map(|i| (i % k) as u32).collect();
    labels.shuffle(&mut rng);
    let centers: Vec<f64> = (0..k * r)
        .map(|_| spec.center_spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let a_scale = 1.0 / (r as f64).sqrt();
    let mixing: Vec<f64> = (0..d * r)
        .map(|_| a_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut dir: Vec<f64> = (0..r)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let smooth = if spec.center_spread > 0.0 {
        spec.loss_smoothness
    } else {
        0.0
    };
    let offsets: Vec<f64> = (0..k)
        .map(|c| {
            let along: f64 = if smooth > 0.0 {
                let center = &centers[c * r..(c + 1) * r];
                center.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / spec.center_spread
            } else {
                0.0
            };
            let own: f64 = rng.sample(StandardNormal);
            spec.sigma_between * (smooth.sqrt() * along + (1.0 - smooth).sqrt() * own)
        })
        .collect();
    let dominant: Vec<u32> = (0..k).map(|_| rng.gen_range(0..spec.num_sources)).collect();

    let baselines: Vec<(u64, f64)> = spec
        .steps
        .iter()
        .map(|&s| (s, spec.baseline_loss(s)))
        .collect();
    let rows: Vec<(Vec<f32>, Vec<ExampleRecord>)> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(spec.seed, 1 + c as u64);
            let lo = c * ROW_CHUNK;
            let hi = ((c + 1) * ROW_CHUNK).min(n);
            let mut emb = Vec::with_capacity((hi - lo) * d);
            let mut recs = Vec::with_capacity(hi - lo);
            let mut z = vec![0.0f64; r];
            for i in lo..hi {
                let label = labels[i] as usize;
                for (l, zl) in z.iter_mut().enumerate() {
                    *zl = centers[label * r + l]
                        + spec.cluster_spread * rng.sample::<f64, _>(StandardNormal);
                }
                for j in 0..d {
                    let a = &mixing[j * r..(j + 1) * r];
                    let proj: f64 = a.iter().zip(&z).map(|(x, y)| x * y).sum();
                    let noise = spec.ambient_noise * rng.sample::<f64, _>(StandardNormal);
                    emb.push((proj + noise) as f32);
                }
                let source = if spec.num_sources == 1 || rng.gen_bool(spec.source_purity) {
                    dominant[label]
                } else {
                    // uniform over the other sources
                    let s = rng.gen_range(0..spec.num_sources - 1);
                    if s >= dominant[label] {
                        s + 1
                    } else {
                        s
                    }
                };
                let token_count = rng.gen_range(spec.token_range.0..=spec.token_range.1);
                let losses = baselines
                    .iter()
                    .map(|&(step, base)| {
                        let noise = spec.sigma_within * rng.sample::<f64, _>(StandardNormal);
                        (step, base + offsets[label] + noise)
                    })
                    .collect();
                recs.push(ExampleRecord {
                    id: i as u64,
                    source,
                    token_count,
                    losses,
                });
            }
            (emb, recs)
        })
        .collect();
    let mut emb = Vec::with_capacity(n * d);
    let mut records = Vec::with_capacity(n);
    for (e, r) in rows {
        emb.extend(e);
        records.extend(r);
    }

    let dups = spec.num_duplicates();
    let mut duplicates = Vec::with_capacity(dups);
    if dups > 0 {
        let picked = rand::seq::index::sample(&mut rng, n, 2 * dups).into_vec();
        for (&orig, &copy) in picked[..dups].iter().zip(&picked[dups..]) {
            duplicates.push((orig, copy));
        }
        duplicates.sort_unstable_by_key(|&(_, copy)| copy);
        for &(orig, copy) in &duplicates {
            emb.copy_within(orig * d..(orig + 1) * d, copy * d);
            labels[copy] = labels[orig];
            let id = records[copy].id;
            records[copy] = ExampleRecord {
                id,
                ..records[orig].clone()
            };
        }
    }

    let mut embeddings = BTreeMap::new();
    embeddings.insert(spec.model_tag.clone(), EmbeddingMatrix::new(n, d, emb)?);
    if let Some(tag) = &spec.noise_model_tag {
        embeddings.insert(
            tag.clone(),
            noise_embeddings(n, d, spec.seed ^ NOISE_STREAM)?,
        );
    }
    let corpus = Corpus::new(records, embeddings)?;
    let planted = Clustering::from_labels(&labels, Provenance::Planted)
        .map_err(|e| SynthError::Infeasible(e.to_string()))?;
    Ok(SyntheticCorpus {
        corpus,
        planted,
        duplicates,
    })
}

/// I.i.d. standard normal embeddings carrying no cluster structure.
pub fn noise_embeddings(n: usize, d: usize, seed: u64) -> Result<EmbeddingMatrix, SynthError> {
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    let chunks: Vec<Vec<f32>> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, NOISE_STREAM + c as u64);
            let rows = ((c + 1) * ROW_CHUNK).min(n) - c * ROW_CHUNK;
            (0..rows * d).map(|_| normal.sample(&mut rng)).collect()
        })
        .collect();
    Ok(EmbeddingMatrix::new(n, d, chunks.concat())?)
}

/// Uniformly random partition into `round(n / avg_size)` clusters of
/// near-equal size.
pub fn random_clustering(n: usize, avg_size: usize, seed: u64) -> Clustering {
    assert!(n > 0 && avg_size > 0, "n and avg_size must be positive");
    let m = ((n as f64 / avg_size as f64).round() as usize).clamp(1, n);
    let mut labels: Vec<u32> = (0..n).map(|i| (i % m) as u32).collect();
    labels.shuffle(&mut chunk_rng(seed, RANDOM_CLUSTERING_STREAM));
    Clustering::new(labels, Provenance::Random { avg_size, seed })
        .expect("every label in 0..m is used")
}
