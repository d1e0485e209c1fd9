//! Diversity-based subset selection: one centroid-nearest representative per
//! RAC cluster under a token budget, and a seeded random baseline.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterError, Clustering, Dendrogram, EpsilonGrid};
use crate::corpus::{Corpus, EmbeddingMatrix};
use crate::distance::CompensatedSum;

#[derive(Debug, Error)]
pub enum CurateError {
    #[error("no epsilon in the grid can fill a budget of {budget} tokens (smallest epsilon reaches {best})")]
    GridExhausted { budget: u64, best: u64 },
    #[error("budget of {budget} tokens exceeds the corpus total of {total}")]
    BudgetExceedsCorpus { budget: u64, total: u64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("{path}: {message}")]
    Io {
        path: std::path::PathBuf,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, CurateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overshoot {
    /// Stop before the first example that would cross the budget.
    #[default]
    Drop,
    /// Admit the example that crosses the budget, then stop.
    Allow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// Largest ε whose representatives hold at least `budget` tokens.
    #[default]
    Tokens,
    /// Largest ε with at least `ceil(budget / mean tokens per example)`
    /// clusters.
    ByCount,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CurateOptions {
    pub rule: BudgetRule,
    pub overshoot: Overshoot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationPlan {
    pub epsilon_chosen: Option<f64>,
    pub selected_ids: Vec<u64>,
    pub token_total: u64,
    pub budget: u64,
    pub baseline: bool,
    pub seed: Option<u64>,
    pub num_clusters: Option<usize>,
    pub rule: Option<BudgetRule>,
    pub overshoot: Overshoot,
}

/// The member of one cluster closest to the cluster mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Representative {
    pub cluster: u32,
    pub row: usize,
    pub id: u64,
    pub cluster_size: usize,
    pub centroid_dist: f64,
}

/// One representative per cluster, in cluster-id order. Ties on centroid
/// distance go to the lowest example id.
pub fn select_representatives(
    c: &Clustering,
    x: &EmbeddingMatrix,
    ids: &[u64],
) -> Result<Vec<Representative>> {
    if c.len() != x.n() || ids.len() != x.n() {
        return Err(CurateError::Invalid(format!(
            "clustering has {} rows, embeddings {}, ids {}",
            c.len(),
            x.n(),
            ids.len()
        )));
    }
    let d = x.d();
    Ok(c.members()
        .par_iter()
        .enumerate()
        .map(|(k, members)| {
            let mut sums = vec![CompensatedSum::default(); d];
            for &i in members {
                for (s, &v) in sums.iter_mut().zip(x.row(i)) {
                    s.add(f64::from(v));
                }
            }
            let len = members.len() as f64;
            let centroid: Vec<f64> = sums.iter().map(|s| s.value() / len).collect();
            let mut best: Option<(f64, u64, usize)> = None;
            for &i in members {
                let dist: f64 = x
                    .row(i)
                    .iter()
                    .zip(&centroid)
                    .map(|(&v, &m)| (f64::from(v) - m).powi(2))
                    .sum();
                let cand = (dist, ids[i], i);
                if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                    best = Some(cand);
                }
            }
            let (centroid_dist, id, row) = best.expect("clusters are non-empty");
            Representative {
                cluster: k as u32,
                row,
                id,
                cluster_size: members.len(),
                centroid_dist,
            }
        })
        .collect())
}

/// Takes `ordered` rows until the budget is met under `overshoot`.
fn truncate(
    ordered: impl Iterator<Item = (u64, u64)>,
    budget: u64,
    overshoot: Overshoot,
) -> (Vec<u64>, u64) {
    let mut ids = Vec::new();
    let mut total = 0u64;
    for (id, tokens) in ordered {
        if total >= budget {
            break;
        }
        if total + tokens > budget {
            if overshoot == Overshoot::Allow {
                ids.push(id);
                total += tokens;
            }
            break;
        }
        ids.push(id);
        total += tokens;
    }
    (ids, total)
}

/// Chooses ε from `grid` by `options.rule`, then emits that cut's
/// representatives (largest clusters first, then nearest to their centroid,
/// then lowest id) until the budget is reached.
pub fn curate(
    corpus: &Corpus,
    x: &EmbeddingMatrix,
    dendro: &Dendrogram,
    grid: &EpsilonGrid,
    budget_tokens: u64,
    options: CurateOptions,
) -> Result<CurationPlan> {
    if budget_tokens == 0 {
        return Err(CurateError::Invalid("budget must be positive".into()));
    }
    if corpus.len() != x.n() || dendro.n() != x.n() {
        return Err(CurateError::Invalid(format!(
            "corpus has {} records, embeddings {} rows, dendrogram {} points",
            corpus.len(),
            x.n(),
            dendro.n()
        )));
    }
    if grid.max() > dendro.epsilon_max() {
        return Err(CurateError::Invalid(format!(
            "grid reaches {} beyond the dendrogram's epsilon_max {}",
            grid.max(),
            dendro.epsilon_max()
        )));
    }
    let ids = corpus.ids();
    let tokens = corpus.token_counts();

    let (epsilon, cut, reps) = match options.rule {
        BudgetRule::Tokens => {
            let mut best = 0u64;
            let mut found = None;
            for &eps in grid.values().iter().rev() {
                let cut = dendro.cut(eps);
                let reps = select_representatives(&cut, x, &ids)?;
                let total: u64 = reps.iter().map(|r| tokens[r.row]).sum();
                if total >= budget_tokens {
                    found = Some((eps, cut, reps));
                    break;
                }
                best = total;
            }
            found.ok_or(CurateError::GridExhausted {
                budget: budget_tokens,
                best,
            })?
        }
        BudgetRule::ByCount => {
            let total: u64 = tokens.iter().sum();
            let mean = total as f64 / tokens.len() as f64;
            let required = ((budget_tokens as f64 / mean).ceil() as usize).max(1);
            let (eps, cut) = crate::cluster::epsilon_sweep(dendro, grid, required)?;
            let reps = select_representatives(&cut, x, &ids)?;
            (eps, cut, reps)
        }
    };

    let mut order = reps;
    order.sort_by(|a, b| {
        b.cluster_size
            .cmp(&a.cluster_size)
            .then(a.centroid_dist.total_cmp(&b.centroid_dist))
            .then(a.id.cmp(&b.id))
    });
    let (selected_ids, token_total) = truncate(
        order.iter().map(|r| (r.id, tokens[r.row])),
        budget_tokens,
        options.overshoot,
    );
    Ok(CurationPlan {
        epsilon_chosen: Some(epsilon),
        selected_ids,
        token_total,
        budget: budget_tokens,
        baseline: false,
        seed: None,
        num_clusters: Some(cut.num_clusters()),
        rule: Some(options.rule),
        overshoot: options.overshoot,
    })
}

/// Prefix of a seeded uniform permutation of the corpus, cut at the budget.
pub fn random_baseline(
    corpus: &Corpus,
    budget_tokens: u64,
    seed: u64,
    overshoot: Overshoot,
) -> Result<CurationPlan> {
    let tokens = corpus.token_counts();
    let total: u64 = tokens.iter().sum();
    if budget_tokens == 0 {
        return Err(CurateError::Invalid("budget must be positive".into()));
    }
    if budget_tokens > total {
        return Err(CurateError::BudgetExceedsCorpus {
            budget: budget_tokens,
            total,
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (selected_ids, token_total) = truncate(
        order.iter().map(|&i| (corpus.records[i].id, tokens[i])),
        budget_tokens,
        overshoot,
    );
    Ok(CurationPlan {
        epsilon_chosen: None,
        selected_ids,
        token_total,
        budget: budget_tokens,
        baseline: true,
        seed: Some(seed),
        num_clusters: None,
        rule: None,
        overshoot,
    })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    epsilon_chosen: Option<f64>,
    num_selected: usize,
    token_total: u64,
    budget: u64,
    baseline: bool,
    seed: Option<u64>,
    num_clusters: Option<usize>,
    rule: Option<BudgetRule>,
    overshoot: Overshoot,
}

impl CurationPlan {
    /// Writes selected ids one per line to `ids_path` and the remaining
    /// fields as JSON to `sidecar_path`.
    pub fn write(&self, ids_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::with_capacity(self.selected_ids.len() * 8);
        for id in &self.selected_ids {
            text.push_str(&id.to_string());
            text.push('\n');
        }
        write_file(ids_path.as_ref(), text)?;
        let side = Sidecar {
            epsilon_chosen: self.epsilon_chosen,
            num_selected: self.selected_ids.len(),
            token_total: self.token_total,
            budget: self.budget,
            baseline: self.baseline,
            seed: self.seed,
            num_clusters: self.num_clusters,
            rule: self.rule,
            overshoot: self.overshoot,
        };
        let json = serde_json::to_string_pretty(&side).expect("plain data serializes");
        write_file(sidecar_path.as_ref(), json + "\n")
    }

    pub fn read(ids_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Self> {
        let ids_text = read_file(ids_path.as_ref())?;
        let selected_ids = ids_text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse()
                    .map_err(|_| CurateError::Invalid(format!("bad id line '{l}'")))
            })
            .collect::<Result<Vec<u64>>>()?;
        let side: Sidecar = serde_json::from_str(&read_file(sidecar_path.as_ref())?)
            .map_err(|e| CurateError::Invalid(e.to_string()))?;
        if side.num_selected != selected_ids.len() {
            return Err(CurateError::Invalid(format!(
                "sidecar lists {} ids, file has {}",
                side.num_selected,
                selected_ids.len()
            )));
        }
        Ok(Self {
            epsilon_chosen: side.epsilon_chosen,
            selected_ids,
            token_total: side.token_total,
            budget: side.budget,
            baseline: side.baseline,
            seed: side.seed,
            num_clusters: side.num_clusters,
            rule: side.rule,
            overshoot: side.overshoot,
        })
    }
}

fn write_file(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CurateError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CurateError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
