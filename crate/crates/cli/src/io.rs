//! File-level helpers shared by the subcommands and the pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use embcurate::cluster::{write_clustering, Clustering, Provenance};
use embcurate::corpus::{read_embeddings, write_embeddings, write_metadata, EmbeddingMatrix};
use embcurate::embed::{embed_corpus, pool_corpus, TokenEmbeddingTable};
use embcurate::testkit::{SyntheticCorpus, SyntheticSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut r = BufReader::with_capacity(1 << 20, f);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let k = r
            .read(&mut buf)
            .with_context(|| format!("cannot read {}", path.display()))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// One line of a token JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub id: u64,
    pub tokens: Vec<u32>,
}

pub fn read_tokens(path: &Path) -> Result<Vec<TokenRecord>> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

/// Reorders `rows` (keyed by id) into the order of `ids`. Every id must be
/// present exactly once.
pub fn align_by_id<T>(rows: Vec<(u64, T)>, ids: &[u64], what: &str) -> Result<Vec<T>> {
    let mut by_id: BTreeMap<u64, T> = BTreeMap::new();
    for (id, v) in rows {
        if by_id.insert(id, v).is_some() {
            bail!("{what}: id {id} appears twice");
        }
    }
    if by_id.len() != ids.len() {
        bail!("{what}: {} entries for {} examples", by_id.len(), ids.len());
    }
    ids.iter()
        .map(|id| {
            by_id
                .remove(id)
                .with_context(|| format!("{what}: no entry for example {id}"))
        })
        .collect()
}

/// Bag-of-tokens embeddings for the examples `ids`, in that order.
pub fn embed_tokens_file(
    tokens: &Path,
    table: &Path,
    exclude: &[u32],
    ids: &[u64],
) -> Result<EmbeddingMatrix> {
    let table = TokenEmbeddingTable::new(read_embeddings(table)?);
    let recs = read_tokens(tokens)?;
    let seqs = align_by_id(
        recs.into_iter().map(|r| (r.id, r.tokens)).collect(),
        ids,
        &tokens.display().to_string(),
    )?;
    Ok(embed_corpus(&seqs, &table, exclude)?)
}

/// Mean-pooled activations read from `<dir>/<id>.emb` for every id.
pub fn pool_activation_dir(dir: &Path, ids: &[u64]) -> Result<EmbeddingMatrix> {
    let seqs = ids
        .iter()
        .map(|id| {
            let p = dir.join(format!("{id}.emb"));
            read_embeddings(&p).with_context(|| format!("activations for example {id}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pool_corpus(&seqs)?)
}

/// Files written by [`write_synthetic`], relative to its output directory.
pub const SYNTH_METADATA: &str = "metadata.jsonl";
pub const SYNTH_PLANTED: &str = "planted_clusters.csv";
pub const SYNTH_DUPLICATES: &str = "duplicates.csv";
pub const SYNTH_SPEC: &str = "synth_spec.json";

pub fn synth_embedding_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join("embeddings").join(format!("{tag}.emb"))
}

/// Writes the standard corpus file set and returns every written path.
pub fn write_synthetic(
    s: &SyntheticCorpus,
    spec: &SyntheticSpec,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("embeddings"))
        .with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = Vec::new();
    let meta = dir.join(SYNTH_METADATA);
    write_metadata(&meta, &s.corpus.records)?;
    written.push(meta);
    for (tag, m) in &s.corpus.embeddings {
        let p = synth_embedding_path(dir, tag);
        write_embeddings(&p, m)?;
        written.push(p);
    }
    let ids = s.corpus.ids();
    let planted = dir.join(SYNTH_PLANTED);
    write_clustering(&planted, &s.planted, Some(&ids))?;
    written.push(planted);
    let dups = dir.join(SYNTH_DUPLICATES);
    let mut w = csv::Writer::from_path(&dups)?;
    w.write_record(["original_id", "copy_id"])?;
    for &(o, c) in &s.duplicates {
        w.write_record([ids[o].to_string(), ids[c].to_string()])?;
    }
    w.flush()?;
    written.push(dups);
    let spec_path = dir.join(SYNTH_SPEC);
    write_json(&spec_path, spec)?;
    written.push(spec_path);
    Ok(written)
}

/// Provenance sidecar written next to every clustering CSV.
pub fn clustering_sidecar(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringMeta {
    pub model: Option<String>,
    pub num_clusters: usize,
    pub provenance: Provenance,
}

pub fn write_clustering_with_meta(
    path: &Path,
    c: &Clustering,
    ids: &[u64],
    model: Option<&str>,
) -> Result<PathBuf> {
    ensure_parent(path)?;
    write_clustering(path, c, Some(ids))?;
    let side = clustering_sidecar(path);
    write_json(
        &side,
        &ClusteringMeta {
            model: model.map(str::to_string),
            num_clusters: c.num_clusters(),
            provenance: c.provenance.clone(),
        },
    )?;
    Ok(side)
}

/// Comma-separated list parser for flags like `--sizes 25,50,100`.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad list entry '{t}': {e}"))
        })
        .collect()
}
