//! End-to-end run: corpus → embeddings → reduction → clusterings →
//! metrics, curation and figures, with per-stage caching and a manifest.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use embcurate::cluster::kmeans::sweep_seed;
use embcurate::cluster::{
    balanced_kmeans_run, build_dendrogram, read_clustering, read_dendrogram, write_dendrogram,
    BalanceConfig, Clustering, EpsilonGrid, Provenance,
};
use embcurate::corpus::{
    read_embeddings, read_metadata, write_embeddings, Corpus, EmbeddingMatrix,
};
use embcurate::curate::{curate, random_baseline, BudgetRule, CurateOptions, Overshoot};
use embcurate::metrics::{checkpoint_sweep, ClusterParam, MetricsReport, SweepEntry};
use embcurate::reduce::{fit, write_reducer};
use embcurate::testkit::generate;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::io::{
    clustering_sidecar, embed_tokens_file, pool_activation_dir, synth_embedding_path,
    write_clustering_with_meta, write_json, write_synthetic, ClusteringMeta, SYNTH_DUPLICATES,
    SYNTH_METADATA, SYNTH_PLANTED, SYNTH_SPEC,
};
use crate::report::{emit_report, FIG2_CSV, FIG3_CSV, FIG4_CSV};
use crate::stage::{StageRecord, StageRunner};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub output_dir: PathBuf,
    pub manifest: PathBuf,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    config: PipelineConfig,
    seeds: BTreeMap<String, u64>,
    stages: &'a [StageRecord],
}

/// Relative file name used for an ε cut, e.g. `rac_eps0.15.csv`.
pub fn rac_csv_name(eps: f64) -> String {
    format!("rac_eps{eps}.csv")
}

pub fn kmeans_csv_name(size: usize) -> String {
    format!("kmeans_avg{size}.csv")
}

fn read_matrix(path: &Path, n: usize) -> Result<EmbeddingMatrix> {
    let x = read_embeddings(path)?;
    if x.n() != n {
        bail!(
            "{} has {} rows but the corpus has {n} examples",
            path.display(),
            x.n()
        );
    }
    Ok(x)
}

fn with_sidecars(csvs: &[PathBuf]) -> Vec<PathBuf> {
    csvs.iter()
        .flat_map(|p| [p.clone(), clustering_sidecar(p)])
        .collect()
}

/// One clustering the metrics stage evaluates.
struct Evaluated {
    model: String,
    param: ClusterParam,
    csv: PathBuf,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut st = StageRunner::new(&out)?;
    let models = cfg.selected_models();

    let (metadata, mut emb_paths): (PathBuf, BTreeMap<String, PathBuf>) = match &cfg.synthetic {
        Some(spec) => {
            let dir = out.join("corpus");
            let tags: Vec<String> = cfg.available_tags();
            let mut outputs: Vec<PathBuf> =
                [SYNTH_METADATA, SYNTH_PLANTED, SYNTH_DUPLICATES, SYNTH_SPEC]
                    .iter()
                    .map(|f| dir.join(f))
                    .collect();
            outputs.extend(tags.iter().map(|t| synth_embedding_path(&dir, t)));
            st.run("synthgen", json!(spec), &[], &outputs, || {
                let s = generate(spec)?;
                write_synthetic(&s, spec, &dir)?;
                Ok(json!({
                    "examples": s.corpus.len(),
                    "duplicates": s.duplicates.len(),
                    "expected_variance_reduction": spec.expected_variance_reduction(),
                }))
            })?;
            let paths = tags
                .iter()
                .map(|t| (t.clone(), synth_embedding_path(&dir, t)))
                .collect();
            (dir.join(SYNTH_METADATA), paths)
        }
        None => (
            cfg.corpus.metadata.clone().expect("validated"),
            cfg.corpus.embeddings.clone(),
        ),
    };

    let corpus = Corpus::new(
        read_metadata(&metadata).context("loading corpus metadata")?,
        BTreeMap::new(),
    )
    .context("loading corpus metadata")?;
    let ids = corpus.ids();
    let n = corpus.len();

    for e in &cfg.embed {
        let path = out.join("embeddings").join(format!("{}.emb", e.tag));
        let mut inputs = vec![metadata.clone()];
        let params = json!({ "exclude": e.exclude, "pooled": e.activations.is_some() });
        match (&e.tokens, &e.table, &e.activations) {
            (Some(t), Some(tb), _) => inputs.extend([t.clone(), tb.clone()]),
            (_, _, Some(dir)) => inputs.extend(ids.iter().map(|id| dir.join(format!("{id}.emb")))),
            _ => unreachable!("validated"),
        }
        st.run(
            &format!("embed:{}", e.tag),
            params,
            &inputs,
            std::slice::from_ref(&path),
            || {
                let x = match (&e.tokens, &e.table, &e.activations) {
                    (Some(t), Some(tb), _) => embed_tokens_file(t, tb, &e.exclude, &ids)?,
                    (_, _, Some(dir)) => pool_activation_dir(dir, &ids)?,
                    _ => unreachable!("validated"),
                };
                write_embeddings(&path, &x)?;
                Ok(json!({ "dim": x.d() }))
            },
        )?;
        emb_paths.insert(e.tag.clone(), path);
    }

    let mut evaluated: Vec<Evaluated> = Vec::new();
    let mut curation_inputs: Vec<(String, PathBuf, PathBuf, EpsilonGrid)> = Vec::new();
    for model in &models {
        let src = emb_paths[model].clone();
        let dir = out.join("reduced");
        let reducer = dir.join(format!("{model}.red1"));
        let reduced = dir.join(format!("{model}.emb"));
        st.run(
            &format!("reduce:{model}"),
            json!(cfg.reduce),
            std::slice::from_ref(&src),
            &[reducer.clone(), reduced.clone()],
            || {
                let x = read_matrix(&src, n)?;
                let r = &cfg.reduce;
                let model = fit(r.scheme, &x, r.k, r.fit_sample, r.seed)?;
                write_reducer(&reducer, &model)?;
                let red = model.apply(&x)?;
                write_embeddings(&reduced, &red.matrix)?;
                if !red.degenerate_rows.is_empty() {
                    log::warn!(
                        "{} rows projected to zero and were replaced by e1",
                        red.degenerate_rows.len()
                    );
                }
                let degenerate: Vec<u64> = red.degenerate_rows.iter().map(|&i| ids[i]).collect();
                Ok(json!({ "input_dim": x.d(), "degenerate_ids": degenerate }))
            },
        )?;

        let cluster_dir = out.join("clusters").join(model);
        let x_cell: OnceCell<EmbeddingMatrix> = OnceCell::new();
        let load = || -> Result<&EmbeddingMatrix> {
            if x_cell.get().is_none() {
                let _ = x_cell.set(read_matrix(&reduced, n)?);
            }
            Ok(x_cell.get().expect("just set"))
        };
        for &size in &cfg.kmeans.sizes {
            let csv = cluster_dir.join(kmeans_csv_name(size));
            let k = &cfg.kmeans;
            let bc = BalanceConfig {
                avg_size: size,
                min_factor: k.min_factor,
                max_factor: k.max_factor,
                seed: sweep_seed(k.seed, size),
                max_iters: k.max_iters,
                init_trials: None,
            };
            let params = json!({
                "avg_size": size,
                "min_factor": k.min_factor,
                "max_factor": k.max_factor,
                "seed": bc.seed,
                "max_iters": k.max_iters,
            });
            st.run(
                &format!("kmeans:{model}:{size}"),
                params,
                &[reduced.clone(), metadata.clone()],
                &with_sidecars(std::slice::from_ref(&csv)),
                || {
                    let run = balanced_kmeans_run(load()?, &bc)?;
                    write_clustering_with_meta(&csv, &run.clustering, &ids, Some(model))?;
                    Ok(json!({
                        "num_clusters": run.clustering.num_clusters(),
                        "iterations": run.iterations,
                        "converged": run.converged,
                        "repaired_points": run.repaired_points,
                    }))
                },
            )?;
            evaluated.push(Evaluated {
                model: model.clone(),
                param: ClusterParam::AvgSize(size),
                csv,
            });
        }

        let Some(grid) = cfg.epsilon_grid(model) else {
            log::info!("no epsilon grid for {model}; skipping RAC");
            continue;
        };
        let grid = EpsilonGrid::new(grid)?;
        let dnd = cluster_dir.join("dendrogram.dnd1");
        st.run(
            &format!("dendrogram:{model}"),
            json!({ "epsilon_max": grid.max() }),
            std::slice::from_ref(&reduced),
            std::slice::from_ref(&dnd),
            || {
                let d = build_dendrogram(load()?, grid.max())?;
                write_dendrogram(&dnd, &d)?;
                Ok(json!({ "merges": d.merges().len() }))
            },
        )?;
        let cuts: Vec<PathBuf> = grid
            .values()
            .iter()
            .map(|&e| cluster_dir.join(rac_csv_name(e)))
            .collect();
        st.run(
            &format!("rac:{model}"),
            json!({ "grid": grid.values() }),
            &[dnd.clone(), metadata.clone()],
            &with_sidecars(&cuts),
            || {
                let d = read_dendrogram(&dnd)?;
                let mut counts = BTreeMap::new();
                for (&eps, csv) in grid.values().iter().zip(&cuts) {
                    let c = d.cut(eps);
                    counts.insert(eps.to_string(), c.num_clusters());
                    write_clustering_with_meta(csv, &c, &ids, Some(model))?;
                }
                Ok(json!({ "num_clusters": counts }))
            },
        )?;
        for (&eps, csv) in grid.values().iter().zip(cuts) {
            evaluated.push(Evaluated {
                model: model.clone(),
                param: ClusterParam::Epsilon(eps),
                csv,
            });
        }
        curation_inputs.push((model.clone(), reduced.clone(), dnd, grid));
    }

    let metrics_dir = out.join("metrics");
    let report_json = metrics_dir.join("report.json");
    if corpus.checkpoint_steps.is_empty() {
        log::warn!("corpus carries no losses; skipping metrics and figures");
    } else {
        let mut inputs = vec![metadata.clone()];
        inputs.extend(with_sidecars(
            &evaluated.iter().map(|e| e.csv.clone()).collect::<Vec<_>>(),
        ));
        let labels: Vec<String> = evaluated
            .iter()
            .map(|e| format!("{}:{}", e.model, e.param))
            .collect();
        st.run(
            "metrics",
            json!({ "clusterings": labels }),
            &inputs,
            &[metrics_dir.join("report.csv"), report_json.clone()],
            || {
                let tables = corpus
                    .checkpoint_steps
                    .iter()
                    .map(|&s| corpus.loss_table(s))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let clusterings = evaluated
                    .iter()
                    .map(|e| read_clustering(&e.csv, Some(&ids)))
                    .collect::<std::result::Result<Vec<Clustering>, _>>()?;
                let entries: Vec<SweepEntry> = evaluated
                    .iter()
                    .zip(&clusterings)
                    .map(|(e, c)| SweepEntry {
                        model: &e.model,
                        param: e.param,
                        clustering: c,
                    })
                    .collect();
                let sources = corpus.sources();
                let report = checkpoint_sweep(&entries, &tables, Some(&sources))?;
                report.write_csv(metrics_dir.join("report.csv"))?;
                report.write_json(&report_json)?;
                Ok(json!({ "rows": report.rows.len() }))
            },
        )?;
        let fig_dir = out.join("figures");
        let figs: Vec<PathBuf> = [FIG2_CSV, FIG3_CSV, FIG4_CSV]
            .iter()
            .flat_map(|f| {
                let svg = f.trim_end_matches(".csv").to_string() + ".svg";
                [fig_dir.join(f), fig_dir.join(svg)]
            })
            .collect();
        st.run(
            "report",
            json!({}),
            std::slice::from_ref(&report_json),
            &figs,
            || {
                let report = MetricsReport::read_json(&report_json)?;
                emit_report(&report, &fig_dir)?;
                Ok(Value::Null)
            },
        )?;
    }

    if let Some(budget) = cfg.curate.budget_tokens {
        let options = CurateOptions {
            rule: if cfg.curate.by_count {
                BudgetRule::ByCount
            } else {
                BudgetRule::Tokens
            },
            overshoot: if cfg.curate.allow_overshoot {
                Overshoot::Allow
            } else {
                Overshoot::Drop
            },
        };
        let params = json!({
            "budget_tokens": budget,
            "rule": options.rule,
            "overshoot": options.overshoot,
        });
        for (model, reduced, dnd, grid) in &curation_inputs {
            let dir = out.join("curation").join(model);
            let (txt, side) = (dir.join("selected.txt"), dir.join("selected.json"));
            let mut p = params.clone();
            p["grid"] = json!(grid.values());
            st.run(
                &format!("curate:{model}"),
                p,
                &[metadata.clone(), reduced.clone(), dnd.clone()],
                &[txt.clone(), side.clone()],
                || {
                    let x = read_matrix(reduced, n)?;
                    let d = read_dendrogram(dnd)?;
                    let plan = curate(&corpus, &x, &d, grid, budget, options)?;
                    plan.write(&txt, &side)?;
                    Ok(json!({
                        "epsilon_chosen": plan.epsilon_chosen,
                        "selected": plan.selected_ids.len(),
                        "token_total": plan.token_total,
                    }))
                },
            )?;
        }
        if cfg.curate.baseline {
            let dir = out.join("curation").join("random");
            let (txt, side) = (dir.join("selected.txt"), dir.join("selected.json"));
            st.run(
                "curate:random",
                json!({ "budget_tokens": budget, "seed": cfg.curate.seed, "overshoot": options.overshoot }),
                std::slice::from_ref(&metadata),
                &[txt.clone(), side.clone()],
                || {
                    let plan = random_baseline(&corpus, budget, cfg.curate.seed, options.overshoot)?;
                    plan.write(&txt, &side)?;
                    Ok(json!({ "selected": plan.selected_ids.len(), "token_total": plan.token_total }))
                },
            )?;
        }
    }

    let mut seeds = BTreeMap::new();
    if let Some(s) = &cfg.synthetic {
        seeds.insert("synthetic".to_string(), s.seed);
    }
    seeds.insert("reduce".to_string(), cfg.reduce.seed);
    seeds.insert("kmeans".to_string(), cfg.kmeans.seed);
    for &size in &cfg.kmeans.sizes {
        seeds.insert(
            format!("kmeans.avg{size}"),
            sweep_seed(cfg.kmeans.seed, size),
        );
    }
    if cfg.curate.budget_tokens.is_some() && cfg.curate.baseline {
        seeds.insert("baseline".to_string(), cfg.curate.seed);
    }
    let mut config = cfg.clone();
    config.output_dir = PathBuf::new();
    let manifest = Manifest {
        tool: "embcurate",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.content_hash(),
        config,
        seeds,
        stages: &st.records,
    };
    let manifest_path = out.join(MANIFEST);
    write_json(&manifest_path, &manifest)?;
    Ok(PipelineOutcome {
        output_dir: out,
        manifest: manifest_path,
        executed: st.executed,
        skipped: st.skipped,
    })
}

/// Reads the provenance sidecar of a clustering CSV, if present.
pub fn read_clustering_meta(csv: &Path) -> Result<Option<ClusteringMeta>> {
    let side = clustering_sidecar(csv);
    if !side.exists() {
        return Ok(None);
    }
    crate::io::read_json(&side).map(Some)
}

/// Restores the provenance recorded next to a clustering CSV.
pub fn with_provenance(c: Clustering, meta: Option<&ClusteringMeta>) -> Result<Clustering> {
    match meta {
        Some(m) => Ok(Clustering::new(
            c.assignments().to_vec(),
            m.provenance.clone(),
        )?),
        None => Ok(Clustering::new(
            c.assignments().to_vec(),
            Provenance::External,
        )?),
    }
}
