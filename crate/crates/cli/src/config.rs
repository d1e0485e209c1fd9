//! Declarative pipeline configuration. Values come from defaults, then a
//! TOML file, then command-line flags, each layer overriding the previous.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use embcurate::cluster::{default_epsilon, EpsilonGrid};
use embcurate::reduce::{Scheme, DEFAULT_FIT_SAMPLE, DEFAULT_K};
use embcurate::testkit::SyntheticSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    /// Generate the corpus instead of reading one.
    pub synthetic: Option<SyntheticSpec>,
    /// Embeddings computed by the pipeline itself.
    pub embed: Vec<EmbedSource>,
    /// Embedding models to evaluate; empty means every available tag.
    pub models: Vec<String>,
    pub reduce: ReduceSection,
    pub kmeans: KmeansSection,
    pub rac: RacSection,
    pub curate: CurateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub metadata: Option<PathBuf>,
    /// Precomputed embeddings, by model tag.
    pub embeddings: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSource {
    pub tag: String,
    /// Token JSONL plus an EMB1 token table, for token-averaged embeddings.
    pub tokens: Option<PathBuf>,
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub exclude: Vec<u32>,
    /// Directory of `<id>.emb` activation files, for mean-pooled embeddings.
    pub activations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceSection {
    pub scheme: Scheme,
    pub k: usize,
    pub fit_sample: usize,
    pub seed: u64,
}

impl Default for ReduceSection {
    fn default() -> Self {
        Self {
            scheme: Scheme::Pca,
            k: DEFAULT_K,
            fit_sample: DEFAULT_FIT_SAMPLE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansSection {
    pub sizes: Vec<usize>,
    pub min_factor: f64,
    pub max_factor: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KmeansSection {
    fn default() -> Self {
        Self {
            sizes: vec![25, 50, 100, 150],
            min_factor: 0.2,
            max_factor: 5.0,
            max_iters: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RacSection {
    /// ε grid for every model. When absent, models with a known default ε
    /// use that single value and the others skip RAC.
    pub epsilon_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateSection {
    /// Token budget; curation is skipped when absent.
    pub budget_tokens: Option<u64>,
    pub by_count: bool,
    pub allow_overshoot: bool,
    /// Also emit the random-selection baseline.
    pub baseline: bool,
    pub seed: u64,
}

impl Default for CurateSection {
    fn default() -> Self {
        Self {
            budget_tokens: None,
            by_count: false,
            allow_overshoot: false,
            baseline: true,
            seed: 0,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("embcurate-out"),
            corpus: CorpusSection::default(),
            synthetic: None,
            embed: Vec::new(),
            models: Vec::new(),
            reduce: ReduceSection::default(),
            kmeans: KmeansSection::default(),
            rac: RacSection::default(),
            curate: CurateSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses a TOML file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: Self =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut cfg.output_dir);
        if let Some(m) = &mut cfg.corpus.metadata {
            resolve(base, m);
        }
        for p in cfg.corpus.embeddings.values_mut() {
            resolve(base, p);
        }
        for e in &mut cfg.embed {
            for p in [&mut e.tokens, &mut e.table, &mut e.activations]
                .into_iter()
                .flatten()
            {
                resolve(base, p);
            }
        }
        Ok(cfg)
    }

    /// Every embedding tag the corpus will provide, ascending.
    pub fn available_tags(&self) -> Vec<String> {
        let mut tags = BTreeSet::new();
        if let Some(s) = &self.synthetic {
            tags.insert(s.model_tag.clone());
            if let Some(t) = &s.noise_model_tag {
                tags.insert(t.clone());
            }
        }
        tags.extend(self.corpus.embeddings.keys().cloned());
        tags.extend(self.embed.iter().map(|e| e.tag.clone()));
        tags.into_iter().collect()
    }

    /// The models this run evaluates.
    pub fn selected_models(&self) -> Vec<String> {
        if self.models.is_empty() {
            self.available_tags()
        } else {
            self.models.clone()
        }
    }

    /// ε grid used for `model`, if RAC runs for it.
    pub fn epsilon_grid(&self, model: &str) -> Option<Vec<f64>> {
        match &self.rac.epsilon_grid {
            Some(g) => Some(g.clone()),
            None => default_epsilon(model).map(|e| vec![e]),
        }
    }

    /// Checks parameters and that every referenced input exists. Runs before
    /// any computation.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |p: &Path, what: &str| -> Result<()> {
            if !p.exists() {
                bail!("{what} not found: {}", p.display());
            }
            Ok(())
        };
        match (&self.synthetic, &self.corpus.metadata) {
            (Some(_), Some(_)) => bail!("set either [synthetic] or corpus.metadata, not both"),
            (None, None) => bail!("no corpus: set corpus.metadata or a [synthetic] section"),
            (Some(s), None) => {
                s.validate().context("invalid [synthetic] section")?;
                if !self.corpus.embeddings.is_empty() || !self.embed.is_empty() {
                    bail!("a synthetic corpus carries its own embeddings");
                }
            }
            (None, Some(m)) => must_exist(m, "metadata file")?,
        }
        for (tag, p) in &self.corpus.embeddings {
            must_exist(p, &format!("embedding file for '{tag}'"))?;
        }
        let mut tags: BTreeSet<&str> = self.corpus.embeddings.keys().map(String::as_str).collect();
        for e in &self.embed {
            if !tags.insert(&e.tag) {
                bail!("embedding tag '{}' defined twice", e.tag);
            }
            match (&e.tokens, &e.table, &e.activations) {
                (Some(t), Some(tb), None) => {
                    must_exist(t, &format!("token file for '{}'", e.tag))?;
                    must_exist(tb, &format!("token table for '{}'", e.tag))?;
                }
                (None, None, Some(a)) => {
                    must_exist(a, &format!("activation directory for '{}'", e.tag))?
                }
                _ => bail!(
                    "embed '{}': give either tokens and table, or activations",
                    e.tag
                ),
            }
        }
        let available = self.available_tags();
        if available.is_empty() {
            bail!("no embedding models available");
        }
        for m in &self.models {
            if !available.contains(m) {
                bail!("model '{m}' not among available embeddings {available:?}");
            }
        }
        if self.reduce.k == 0 {
            bail!("reduce.k must be positive");
        }
        if self.reduce.fit_sample == 0 {
            bail!("reduce.fit_sample must be positive");
        }
        if self.kmeans.sizes.is_empty() {
            bail!("kmeans.sizes must not be empty");
        }
        let mut seen = BTreeSet::new();
        for &s in &self.kmeans.sizes {
            if s == 0 || !seen.insert(s) {
                bail!(
                    "kmeans.sizes must be positive and distinct, got {:?}",
                    self.kmeans.sizes
                );
            }
        }
        if let Some(g) = &self.rac.epsilon_grid {
            EpsilonGrid::new(g.clone()).context("invalid rac.epsilon_grid")?;
        }
        if let Some(b) = self.curate.budget_tokens {
            if b == 0 {
                bail!("curate.budget_tokens must be positive");
            }
            for m in self.selected_models() {
                if self.epsilon_grid(&m).is_none() {
                    bail!("curation needs an epsilon grid for model '{m}' (set rac.epsilon_grid)");
                }
            }
        }
        Ok(())
    }

    /// Hash of everything that determines the artifacts. The output
    /// directory is excluded so relocated runs hash equally.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        crate::io::sha256_bytes(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}
