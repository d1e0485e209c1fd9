//! Argument definitions and the handler behind each subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use embcurate::cluster::kmeans::sweep_seed;
use embcurate::cluster::{
    balanced_kmeans_run, build_dendrogram, default_epsilon, epsilon_sweep, read_clustering,
    read_dendrogram, write_dendrogram, BalanceConfig, Dendrogram, EpsilonGrid,
};
use embcurate::corpus::{pack_documents, read_embeddings, read_metadata, write_embeddings, Corpus};
use embcurate::curate::{curate, random_baseline, BudgetRule, CurateOptions, Overshoot};
use embcurate::embed::{embed_corpus, TokenEmbeddingTable};
use embcurate::metrics::{checkpoint_sweep, ClusterParam, MetricsReport, SweepEntry};
use embcurate::reduce::{fit, read_reducer, write_reducer, Scheme, DEFAULT_FIT_SAMPLE, DEFAULT_K};
use embcurate::testkit::{generate, SyntheticSpec};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::io::{
    align_by_id, ensure_parent, parse_list, pool_activation_dir, read_tokens,
    write_clustering_with_meta, write_synthetic,
};
use crate::pipeline::{
    kmeans_csv_name, rac_csv_name, read_clustering_meta, run_pipeline, with_provenance,
};
use crate::report::{emit_report, render_plots};

#[derive(Debug, Parser)]
#[command(
    name = "embcurate",
    version,
    about = "Evaluate embeddings for pretraining data curation"
)]
pub struct Cli {
    /// Worker thread cap; defaults to every available core.
    #[arg(long, global = true, env = "EMBCURATE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted synthetic corpus.
    Synthgen(SynthgenArgs),
    /// Embed documents by token averaging or activation pooling.
    Embed(EmbedArgs),
    /// Fit or apply a PCA / random-projection reducer.
    Reduce(ReduceArgs),
    /// Balanced K-means at one or more average cluster sizes.
    ClusterKmeans(KmeansArgs),
    /// Reciprocal agglomerative clustering cut at ε.
    ClusterRac(RacArgs),
    /// Variance reduction and purity of clusterings.
    Metrics(MetricsArgs),
    /// Select a token-budgeted subset, or the random baseline.
    Curate(CurateArgs),
    /// Figure CSVs and plots from a metrics report.
    Report(ReportArgs),
    /// Run every stage from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthgenArgs {
    /// Generator spec (TOML, or JSON when the extension is .json).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k_true: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub duplicate_fraction: Option<f64>,
    #[arg(long)]
    pub model_tag: Option<String>,
    /// Also write pure-noise embeddings under this tag.
    #[arg(long)]
    pub noise_tag: Option<String>,
    /// Comma-separated checkpoint steps.
    #[arg(long)]
    pub steps: Option<String>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Token JSONL, one `{"id", "tokens"}` object per line.
    #[arg(long, requires = "table", conflicts_with = "activations")]
    pub tokens: Option<PathBuf>,
    /// EMB1 token-embedding table (one row per vocabulary id).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Directory of `<id>.emb` activation files.
    #[arg(long, requires = "metadata")]
    pub activations: Option<PathBuf>,
    /// Orders output rows like this metadata file.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Comma-separated token ids left out of the average.
    #[arg(long)]
    pub exclude: Option<String>,
    /// Pack documents into sequences of this length and embed each sequence.
    #[arg(long, requires_all = ["eod", "pad"], conflicts_with = "metadata")]
    pub pack_len: Option<usize>,
    #[arg(long)]
    pub eod: Option<u32>,
    #[arg(long)]
    pub pad: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Reduced, row-normalized embeddings.
    #[arg(long)]
    pub output: PathBuf,
    /// Apply this fitted reducer instead of fitting one.
    #[arg(long, conflicts_with = "model_out")]
    pub model_in: Option<PathBuf>,
    /// Save the fitted reducer here.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long, default_value = "pca")]
    pub scheme: Scheme,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_FIT_SAMPLE)]
    pub fit_sample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct KmeansArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Example ids for the CSV; row indices are used without it.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[arg(long, default_value = "25,50,100,150")]
    pub sizes: String,
    #[arg(long, default_value_t = 0.2)]
    pub min_factor: f64,
    #[arg(long, default_value_t = 5.0)]
    pub max_factor: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RacArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Single threshold (squared L2).
    #[arg(long, conflicts_with = "epsilon_grid")]
    pub epsilon: Option<f64>,
    /// Comma-separated ascending thresholds.
    #[arg(long)]
    pub epsilon_grid: Option<String>,
    /// Keep only the largest grid value with at least this many clusters.
    #[arg(long, requires = "epsilon_grid")]
    pub required_clusters: Option<usize>,
    /// Reuse a saved dendrogram instead of building one.
    #[arg(long, conflicts_with = "embeddings")]
    pub dendrogram_in: Option<PathBuf>,
    #[arg(long)]
    pub dendrogram_out: Option<PathBuf>,
    /// Model tag; also selects the default ε when none is given.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub metadata: PathBuf,
    /// Clustering CSV; repeat for several.
    #[arg(long, required = true)]
    pub clustering: Vec<PathBuf>,
    /// Model tag per clustering, or one tag for all. Defaults to the sidecar.
    #[arg(long)]
    pub model: Vec<String>,
    /// Comma-separated checkpoint steps; defaults to every step.
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub metadata: PathBuf,
    /// Reduced embeddings used for centroid distances.
    #[arg(long, required_unless_present = "baseline")]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub dendrogram_in: Option<PathBuf>,
    #[arg(long, required_unless_present = "baseline")]
    pub epsilon_grid: Option<String>,
    #[arg(long)]
    pub budget_tokens: u64,
    /// Choose ε by cluster count instead of token total.
    #[arg(long)]
    pub by_count: bool,
    #[arg(long)]
    pub allow_overshoot: bool,
    /// Random selection instead of clustering.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Selected ids, one per line; the JSON sidecar goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics report JSON.
    #[arg(long, required_unless_present = "regenerate")]
    pub metrics: Option<PathBuf>,
    #[arg(long, required_unless_present = "regenerate")]
    pub out_dir: Option<PathBuf>,
    /// Re-render plots from the figure CSVs in this directory.
    #[arg(long, conflicts_with_all = ["metrics", "out_dir"])]
    pub regenerate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// `tag=path`; repeat for several models.
    #[arg(long)]
    pub embeddings: Vec<String>,
    /// Synthetic generator spec to use as the corpus.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Comma-separated model tags to evaluate.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub fit_sample: Option<usize>,
    #[arg(long)]
    pub reduce_seed: Option<u64>,
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long)]
    pub kmeans_seed: Option<u64>,
    #[arg(long)]
    pub epsilon_grid: Option<String>,
    #[arg(long)]
    pub budget_tokens: Option<u64>,
    #[arg(long)]
    pub by_count: bool,
    #[arg(long)]
    pub allow_overshoot: bool,
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(long)]
    pub baseline_seed: Option<u64>,
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synthgen(a) => synthgen(a),
        Command::Embed(a) => embed(a),
        Command::Reduce(a) => reduce(a),
        Command::ClusterKmeans(a) => cluster_kmeans(a),
        Command::ClusterRac(a) => cluster_rac(a),
        Command::Metrics(a) => metrics(a),
        Command::Curate(a) => curate_cmd(a),
        Command::Report(a) => report(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn load_spec(path: &Path) -> Result<SyntheticSpec> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("invalid spec {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("invalid spec {}", path.display()))
    }
}

fn synthgen(a: SynthgenArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.d {
        spec.d = v;
    }
    if let Some(v) = a.k_true {
        spec.k_true = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.duplicate_fraction {
        spec.duplicate_fraction = v;
    }
    if let Some(v) = a.model_tag {
        spec.model_tag = v;
    }
    if a.noise_tag.is_some() {
        spec.noise_model_tag = a.noise_tag;
    }
    if let Some(s) = &a.steps {
        spec.steps = parse_list(s)?;
    }
    let s = generate(&spec)?;
    let files = write_synthetic(&s, &spec, &a.out)?;
    println!(
        "wrote {} examples ({} files) to {}",
        s.corpus.len(),
        files.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SpanDoc {
    id: u64,
    start: usize,
    end: usize,
}

#[derive(Serialize)]
struct SequenceSpans {
    sequence: usize,
    docs: Vec<SpanDoc>,
}

fn embed(a: EmbedArgs) -> Result<()> {
    let exclude: Vec<u32> = a
        .exclude
        .as_deref()
        .map(parse_list)
        .transpose()?
        .unwrap_or_default();
    let x = if let Some(dir) = &a.activations {
        let meta = a.metadata.as_ref().expect("clap requires metadata");
        let ids: Vec<u64> = read_metadata(meta)?.iter().map(|r| r.id).collect();
        pool_activation_dir(dir, &ids)?
    } else {
        let (Some(tokens), Some(table)) = (&a.tokens, &a.table) else {
            bail!("give --tokens with --table, or --activations");
        };
        let table = TokenEmbeddingTable::new(read_embeddings(table)?);
        let recs = read_tokens(tokens)?;
        if let Some(len) = a.pack_len {
            let (eod, pad) = (a.eod.expect("clap"), a.pad.expect("clap"));
            let docs: Vec<Vec<u32>> = recs.iter().map(|r| r.tokens.clone()).collect();
            let packed = pack_documents(&docs, len, eod, pad)?;
            let mut skip = exclude.clone();
            skip.extend([eod, pad]);
            let seqs: Vec<Vec<u32>> = packed.iter().map(|p| p.tokens.clone()).collect();
            let x = embed_corpus(&seqs, &table, &skip)?;
            let spans_path = {
                let mut s = a.out.as_os_str().to_owned();
                s.push(".spans.jsonl");
                PathBuf::from(s)
            };
            let mut text = String::new();
            for (i, p) in packed.iter().enumerate() {
                let docs = p
                    .doc_spans
                    .iter()
                    .map(|s| SpanDoc {
                        id: recs[s.doc].id,
                        start: s.start,
                        end: s.end,
                    })
                    .collect();
                text.push_str(&serde_json::to_string(&SequenceSpans {
                    sequence: i,
                    docs,
                })?);
                text.push('\n');
            }
            ensure_parent(&spans_path)?;
            std::fs::write(&spans_path, text)?;
            x
        } else {
            let seqs: Vec<Vec<u32>> = match &a.metadata {
                Some(m) => {
                    let ids: Vec<u64> = read_metadata(m)?.iter().map(|r| r.id).collect();
                    align_by_id(
                        recs.into_iter().map(|r| (r.id, r.tokens)).collect(),
                        &ids,
                        &tokens.display().to_string(),
                    )?
                }
                None => recs.into_iter().map(|r| r.tokens).collect(),
            };
            embed_corpus(&seqs, &table, &exclude)?
        }
    };
    ensure_parent(&a.out)?;
    write_embeddings(&a.out, &x)?;
    println!(
        "wrote {} x {} embeddings to {}",
        x.n(),
        x.d(),
        a.out.display()
    );
    Ok(())
}

fn reduce(a: ReduceArgs) -> Result<()> {
    let x = read_embeddings(&a.input)?;
    let model = match &a.model_in {
        Some(p) => read_reducer(p)?,
        None => fit(a.scheme, &x, a.k, a.fit_sample, a.seed)?,
    };
    if let Some(p) = &a.model_out {
        ensure_parent(p)?;
        write_reducer(p, &model)?;
    }
    let red = model.apply(&x)?;
    ensure_parent(&a.output)?;
    write_embeddings(&a.output, &red.matrix)?;
    if !red.degenerate_rows.is_empty() {
        log::warn!(
            "{} rows projected to zero and were replaced by e1: {:?}",
            red.degenerate_rows.len(),
            red.degenerate_rows
        );
    }
    println!("reduced {} x {} to {} dims", x.n(), x.d(), model.k());
    Ok(())
}

fn ids_for(metadata: Option<&Path>, n: usize) -> Result<Vec<u64>> {
    match metadata {
        Some(m) => {
            let ids: Vec<u64> = read_metadata(m)?.iter().map(|r| r.id).collect();
            if ids.len() != n {
                bail!(
                    "{} lists {} examples but the embeddings have {n} rows",
                    m.display(),
                    ids.len()
                );
            }
            Ok(ids)
        }
        None => Ok((0..n as u64).collect()),
    }
}

fn cluster_kmeans(a: KmeansArgs) -> Result<()> {
    let x = read_embeddings(&a.embeddings)?;
    let ids = ids_for(a.metadata.as_deref(), x.n())?;
    let sizes: Vec<usize> = parse_list(&a.sizes)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(d) = sizes.iter().find(|s| !seen.insert(**s)) {
        bail!("duplicate sweep size {d}");
    }
    for size in sizes {
        let cfg = BalanceConfig {
            avg_size: size,
            min_factor: a.min_factor,
            max_factor: a.max_factor,
            seed: sweep_seed(a.seed, size),
            max_iters: a.max_iters,
            init_trials: None,
        };
        let run = balanced_kmeans_run(&x, &cfg).with_context(|| format!("avg size {size}"))?;
        let path = a.out_dir.join(kmeans_csv_name(size));
        write_clustering_with_meta(&path, &run.clustering, &ids, a.model.as_deref())?;
        println!(
            "avg size {size}: {} clusters, {} iterations -> {}",
            run.clustering.num_clusters(),
            run.iterations,
            path.display()
        );
    }
    Ok(())
}

fn cluster_rac(a: RacArgs) -> Result<()> {
    let grid: Vec<f64> = match (&a.epsilon, &a.epsilon_grid) {
        (Some(e), _) => vec![*e],
        (None, Some(g)) => parse_list(g)?,
        (None, None) => match a.model.as_deref().and_then(default_epsilon) {
            Some(e) => vec![e],
            None => bail!("give --epsilon or --epsilon-grid (no default for this model)"),
        },
    };
    let grid = EpsilonGrid::new(grid)?;
    let dendro: Dendrogram = match (&a.dendrogram_in, &a.embeddings) {
        (Some(p), _) => read_dendrogram(p)?,
        (None, Some(e)) => build_dendrogram(&read_embeddings(e)?, grid.max())?,
        (None, None) => bail!("give --embeddings or --dendrogram-in"),
    };
    if let Some(p) = &a.dendrogram_out {
        ensure_parent(p)?;
        write_dendrogram(p, &dendro)?;
    }
    let ids = ids_for(a.metadata.as_deref(), dendro.n())?;
    let chosen: Vec<f64> = match a.required_clusters {
        Some(r) => {
            let (eps, _) = epsilon_sweep(&dendro, &grid, r)?;
            println!("chosen epsilon {eps}");
            vec![eps]
        }
        None => grid.values().to_vec(),
    };
    for eps in chosen {
        let c = dendro.cut(eps);
        let path = a.out_dir.join(rac_csv_name(eps));
        write_clustering_with_meta(&path, &c, &ids, a.model.as_deref())?;
        println!(
            "epsilon {eps}: {} clusters -> {}",
            c.num_clusters(),
            path.display()
        );
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let corpus = Corpus::new(read_metadata(&a.metadata)?, BTreeMap::new())?;
    let ids = corpus.ids();
    if a.model.len() > 1 && a.model.len() != a.clustering.len() {
        bail!("give one --model per --clustering, or a single --model");
    }
    let steps: Vec<u64> = match &a.steps {
        Some(s) => parse_list(s)?,
        None => corpus.checkpoint_steps.clone(),
    };
    if steps.is_empty() {
        bail!("{} carries no losses", a.metadata.display());
    }
    let tables = steps
        .iter()
        .map(|&s| corpus.loss_table(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut loaded = Vec::new();
    for (i, path) in a.clustering.iter().enumerate() {
        let meta = read_clustering_meta(path)?;
        let c = with_provenance(read_clustering(path, Some(&ids))?, meta.as_ref())?;
        let model = match (a.model.len(), &meta) {
            (0, Some(m)) if m.model.is_some() => m.model.clone().expect("checked"),
            (0, _) => bail!(
                "{}: no model tag in its sidecar; pass --model",
                path.display()
            ),
            (1, _) => a.model[0].clone(),
            _ => a.model[i].clone(),
        };
        let param = ClusterParam::from_provenance(&c.provenance).with_context(|| {
            format!(
                "{}: no size or epsilon recorded in its sidecar",
                path.display()
            )
        })?;
        loaded.push((model, param, c));
    }
    let entries: Vec<SweepEntry> = loaded
        .iter()
        .map(|(m, p, c)| SweepEntry {
            model: m,
            param: *p,
            clustering: c,
        })
        .collect();
    let sources = corpus.sources();
    let report = checkpoint_sweep(&entries, &tables, Some(&sources))?;
    ensure_parent(&a.out_csv)?;
    report.write_csv(&a.out_csv)?;
    if let Some(j) = &a.out_json {
        ensure_parent(j)?;
        report.write_json(j)?;
    }
    println!(
        "{} metric rows -> {}",
        report.rows.len(),
        a.out_csv.display()
    );
    Ok(())
}

fn sidecar_for(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn curate_cmd(a: CurateArgs) -> Result<()> {
    let corpus = Corpus::new(read_metadata(&a.metadata)?, BTreeMap::new())?;
    let overshoot = if a.allow_overshoot {
        Overshoot::Allow
    } else {
        Overshoot::Drop
    };
    let plan = if a.baseline {
        random_baseline(&corpus, a.budget_tokens, a.seed, overshoot)?
    } else {
        let grid = EpsilonGrid::new(parse_list(a.epsilon_grid.as_deref().expect("clap"))?)?;
        let x = read_embeddings(a.embeddings.as_ref().expect("clap"))?;
        let dendro = match &a.dendrogram_in {
            Some(p) => read_dendrogram(p)?,
            None => build_dendrogram(&x, grid.max())?,
        };
        let options = CurateOptions {
            rule: if a.by_count {
                BudgetRule::ByCount
            } else {
                BudgetRule::Tokens
            },
            overshoot,
        };
        curate(&corpus, &x, &dendro, &grid, a.budget_tokens, options)?
    };
    ensure_parent(&a.out)?;
    let side = sidecar_for(&a.out);
    plan.write(&a.out, &side)?;
    match plan.epsilon_chosen {
        Some(e) => println!(
            "epsilon {e}: {} examples, {} tokens -> {}",
            plan.selected_ids.len(),
            plan.token_total,
            a.out.display()
        ),
        None => println!(
            "random baseline: {} examples, {} tokens -> {}",
            plan.selected_ids.len(),
            plan.token_total,
            a.out.display()
        ),
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let files = match &a.regenerate {
        Some(dir) => render_plots(dir)?,
        None => {
            let report = MetricsReport::read_json(a.metrics.as_ref().expect("clap"))?;
            emit_report(&report, a.out_dir.as_ref().expect("clap"))?
        }
    };
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

/// Builds the effective config: defaults, then the file, then flags.
pub fn pipeline_config(a: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    if let Some(m) = &a.metadata {
        cfg.corpus.metadata = Some(m.clone());
    }
    for e in &a.embeddings {
        let (tag, path) = e
            .split_once('=')
            .with_context(|| format!("--embeddings expects tag=path, got '{e}'"))?;
        cfg.corpus
            .embeddings
            .insert(tag.to_string(), PathBuf::from(path));
    }
    if let Some(s) = &a.synthetic {
        cfg.synthetic = Some(load_spec(s)?);
    }
    if let Some(m) = &a.models {
        cfg.models = parse_list(m)?;
    }
    if let Some(s) = a.scheme {
        cfg.reduce.scheme = s;
    }
    if let Some(k) = a.k {
        cfg.reduce.k = k;
    }
    if let Some(s) = a.fit_sample {
        cfg.reduce.fit_sample = s;
    }
    if let Some(s) = a.reduce_seed {
        cfg.reduce.seed = s;
    }
    if let Some(s) = &a.sizes {
        cfg.kmeans.sizes = parse_list(s)?;
    }
    if let Some(s) = a.kmeans_seed {
        cfg.kmeans.seed = s;
    }
    if let Some(g) = &a.epsilon_grid {
        cfg.rac.epsilon_grid = Some(parse_list(g)?);
    }
    if let Some(b) = a.budget_tokens {
        cfg.curate.budget_tokens = Some(b);
    }
    if a.by_count {
        cfg.curate.by_count = true;
    }
    if a.allow_overshoot {
        cfg.curate.allow_overshoot = true;
    }
    if a.no_baseline {
        cfg.curate.baseline = false;
    }
    if let Some(s) = a.baseline_seed {
        cfg.curate.seed = s;
    }
    Ok(cfg)
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = pipeline_config(&a)?;
    let outcome = run_pipeline(&cfg)?;
    println!(
        "{} stages run, {} up to date; manifest {}",
        outcome.executed.len(),
        outcome.skipped.len(),
        outcome.manifest.display()
    );
    Ok(())
}
