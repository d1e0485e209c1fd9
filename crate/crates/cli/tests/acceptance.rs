//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Pass criterion names (e.g. `AC3 AC10`) as arguments to run a
//! subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use embcurate::cluster::kmeans::sweep_seed;
use embcurate::cluster::{
    balanced_kmeans, build_dendrogram, rac_cluster, BalanceConfig, ClusterError, Clustering,
    EpsilonGrid, Provenance,
};
use embcurate::corpus::{EmbeddingMatrix, LossTable};
use embcurate::curate::{curate, BudgetRule, CurateError, CurateOptions, Overshoot};
use embcurate::metrics::{
    cluster_purity, variance_reduction, variance_reduction_values, MetricsError,
};
use embcurate::reduce::{apply_pca, fit, fit_pca, fit_rp, Scheme, DEFAULT_FIT_SAMPLE};
use embcurate::testkit::oracle::{
    oracle_complete_linkage, oracle_pca, oracle_variance_reduction, principal_angles,
};
use embcurate::testkit::{generate, random_clustering, SyntheticCorpus, SyntheticSpec};
use embcurate_cli::{run_pipeline, with_threads, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;

const PLANTED_STEP: u64 = 26_000;
const SWEEP_SIZES: [usize; 5] = [10, 25, 50, 100, 150];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn sq_dist64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum()
}

/// Gaussian blobs: `centers` centers with spread `center_spread`, unit
/// within-blob spread.
fn blobs(
    r: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    centers: usize,
    center_spread: f64,
) -> EmbeddingMatrix {
    let c: Vec<f64> = (0..centers * d)
        .map(|_| center_spread * gaussian(r))
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let k = r.gen_range(0..centers);
        data.extend((0..d).map(|j| (c[k * d + j] + gaussian(r)) as f32));
    }
    EmbeddingMatrix::new(n, d, data).unwrap()
}

/// Canonical labels: clusters numbered by first appearance.
fn canonical(labels: &[u32]) -> Vec<u32> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn sizes(labels: &[u32]) -> Vec<usize> {
    let m = labels.iter().max().map_or(0, |&l| l as usize + 1);
    let mut s = vec![0usize; m];
    for &l in labels {
        s[l as usize] += 1;
    }
    s
}

/// Adjusted Rand index from the contingency table.
fn ari(a: &[u32], b: &[u32]) -> f64 {
    let c2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((*x, *y)).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = sizes(a).into_iter().map(c2).sum();
    let sb: f64 = sizes(b).into_iter().map(c2).sum();
    let expected = sa * sb / c2(a.len());
    let max = (sa + sb) / 2.0;
    (index - expected) / (max - expected)
}

struct Planted {
    spec: SyntheticSpec,
    data: SyntheticCorpus,
    loss: LossTable,
}

fn planted(seed: u64) -> Planted {
    let spec = SyntheticSpec {
        n: 20_000,
        d: 256,
        k_true: 2000,
        sigma_between: 3.0,
        sigma_within: 1.0,
        seed,
        noise_model_tag: Some("noise".into()),
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).unwrap();
    let loss = data.corpus.loss_table(PLANTED_STEP).unwrap();
    Planted { spec, data, loss }
}

fn reduce(x: &EmbeddingMatrix, scheme: Scheme, k: usize, seed: u64) -> EmbeddingMatrix {
    fit(scheme, x, k, DEFAULT_FIT_SAMPLE, seed)
        .unwrap()
        .apply(x)
        .unwrap()
        .matrix
}

fn kmeans_vr(x: &EmbeddingMatrix, size: usize, seed: u64, loss: &LossTable) -> f64 {
    let c = balanced_kmeans(x, &BalanceConfig::new(size, sweep_seed(seed, size))).unwrap();
    variance_reduction(&c, loss).unwrap()
}

/// Seed-0 planted corpus and its PCA-64 sweep, shared by several criteria.
struct Shared {
    planted: Planted,
    pca64: BTreeMap<usize, f64>,
}

#[derive(Default)]
struct Ctx {
    shared: Option<Shared>,
}

impl Ctx {
    fn shared(&mut self) -> &Shared {
        self.shared.get_or_insert_with(|| {
            let planted = planted(0);
            let x = reduce(
                &planted.data.corpus.embeddings["synthetic"],
                Scheme::Pca,
                64,
                0,
            );
            let pca64 = SWEEP_SIZES
                .iter()
                .map(|&s| (s, kmeans_vr(&x, s, 0, &planted.loss)))
                .collect();
            Shared { planted, pca64 }
        })
    }
}

fn ac1(_: &mut Ctx) -> Check {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for _ in 0..100 {
        let n = r.gen_range(2..=1000);
        let m = r.gen_range(1..=n);
        let labels: Vec<u32> = (0..n).map(|_| r.gen_range(0..m as u32)).collect();
        let scale = 10f64.powf(r.gen_range(-3.0..3.0));
        let losses: Vec<f64> = (0..n).map(|_| scale * gaussian(&mut r) + 3.0).collect();
        let c = Clustering::from_labels(&labels, Provenance::External).map_err(err)?;
        let dense = c.assignments().to_vec();
        let want = oracle_variance_reduction(&dense, &losses).map_err(err)?;
        match variance_reduction_values(&c, &losses) {
            Ok(got) => {
                let rel = (got - want).abs() / want.abs();
                if rel > 1e-9 {
                    return Err(format!("n={n}: {got} vs oracle {want} (rel {rel:e})"));
                }
                worst = worst.max(rel);
                compared += 1;
            }
            Err(MetricsError::Infinite) if want.is_infinite() => {}
            Err(e) => return Err(format!("n={n}: {e}, oracle {want}")),
        }
    }
    Ok(format!(
        "{compared} finite instances, worst relative error {worst:.1e}"
    ))
}

fn ac2(_: &mut Ctx) -> Check {
    let n = 100_000;
    let mut sum = 0.0;
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let losses: Vec<f64> = (0..n).map(|_| 3.0 + gaussian(&mut r)).collect();
        let c = random_clustering(n, 50, seed);
        sum += variance_reduction_values(&c, &losses).map_err(err)?;
    }
    let mean = sum / 20.0;
    let detail = format!("mean VR {mean:.4} over 20 seeds");
    if (mean - 1.0).abs() <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac3(ctx: &mut Ctx) -> Check {
    let sh = ctx.shared();
    let p = &sh.planted;
    let size = p.spec.n / p.spec.k_true;
    let signal = sh.pca64[&size];
    let noise_x = reduce(&p.data.corpus.embeddings["noise"], Scheme::Pca, 64, 0);
    let noise = kmeans_vr(&noise_x, size, 0, &p.loss);
    let (b, w) = (p.spec.sigma_between, p.spec.sigma_within);
    let expected = (b * b + w * w) / (w * w);
    let detail = format!(
        "avg size {size}: planted VR {signal:.3}, noise VR {noise:.3}, ratio {:.2}, expected planted {expected:.1}",
        signal / noise
    );
    if signal >= 5.0 * noise && (signal - expected).abs() <= 0.3 * expected {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac4(ctx: &mut Ctx) -> Check {
    let sh = ctx.shared();
    let size = sh.planted.spec.n / sh.planted.spec.k_true;
    let (small, large) = (sh.pca64[&size], sh.pca64[&(10 * size)]);
    let detail = format!(
        "VR {small:.3} at avg size {size}, {large:.3} at {}",
        10 * size
    );
    if small >= large {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac5(_: &mut Ctx) -> Check {
    let mut r = rng(5);
    let (mut pairs, mut nontrivial) = (0u64, 0usize);
    for inst in 0..50 {
        let n = r.gen_range(50..=5000);
        let d = r.gen_range(2..=16);
        let centers = r.gen_range(1..=n / 10 + 1);
        let x = blobs(&mut r, n, d, centers, 4.0);
        let eps = 2.0 * d as f64 * r.gen_range(0.05..1.5);
        let c = rac_cluster(&x, eps).map_err(err)?;
        for members in c.members() {
            if members.len() > 1 {
                nontrivial += 1;
            }
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    pairs += 1;
                    let dist = sq_dist64(x.row(a), x.row(b));
                    if dist > eps {
                        return Err(format!(
                            "instance {inst}: pair ({a}, {b}) at {dist} > eps {eps}"
                        ));
                    }
                }
            }
        }
    }
    Ok(format!(
        "0 violations over {pairs} intra-cluster pairs, {nontrivial} non-singleton clusters"
    ))
}

fn ac6(_: &mut Ctx) -> Check {
    let mut r = rng(6);
    let mut cuts = 0;
    for inst in 0..50 {
        let n = r.gen_range(2..=200);
        let d = r.gen_range(1..=8);
        let centers = r.gen_range(1..=10);
        let x = blobs(&mut r, n, d, centers, 3.0);
        for _ in 0..5 {
            let eps = 2.0 * d as f64 * r.gen_range(0.01..3.0);
            let got = rac_cluster(&x, eps).map_err(err)?;
            let want = oracle_complete_linkage(&x, eps).map_err(err)?;
            if canonical(got.assignments()) != canonical(&want) {
                return Err(format!(
                    "instance {inst} (n={n}, eps={eps}) differs from the oracle"
                ));
            }
            cuts += 1;
        }
    }
    Ok(format!("{cuts} cuts identical to naive complete linkage"))
}

fn ac7(_: &mut Ctx) -> Check {
    let mut r = rng(7);
    let x = blobs(&mut r, 2000, 8, 40, 4.0);
    let grid: Vec<f64> = (1..=12).map(|i| 0.5 * f64::from(i * i)).collect();
    let dendro = build_dendrogram(&x, *grid.last().unwrap()).map_err(err)?;
    let cuts: Vec<Clustering> = grid.iter().map(|&e| dendro.cut(e)).collect();
    let counts: Vec<usize> = cuts.iter().map(Clustering::num_clusters).collect();
    for w in counts.windows(2) {
        if w[1] > w[0] {
            return Err(format!(
                "cluster counts increase along the grid: {counts:?}"
            ));
        }
    }
    for (i, w) in cuts.windows(2).enumerate() {
        let mut coarse_of: BTreeMap<u32, u32> = BTreeMap::new();
        for (f, c) in w[0].assignments().iter().zip(w[1].assignments()) {
            if *coarse_of.entry(*f).or_insert(*c) != *c {
                return Err(format!(
                    "cut at {} is not nested in the cut at {}",
                    grid[i],
                    grid[i + 1]
                ));
            }
        }
    }
    for (&eps, cut) in grid.iter().zip(&cuts).step_by(4) {
        let direct = rac_cluster(&x, eps).map_err(err)?;
        if canonical(direct.assignments()) != canonical(cut.assignments()) {
            return Err(format!("dendrogram cut at {eps} differs from a direct run"));
        }
    }
    Ok(format!("counts {counts:?}"))
}

fn ac8(_: &mut Ctx) -> Check {
    let check_bounds = |labels: &[u32], avg: usize, what: &str| -> Result<(), String> {
        let (lo, hi) = (avg as f64 / 5.0, 5.0 * avg as f64);
        match sizes(labels)
            .into_iter()
            .find(|&s| (s as f64) < lo || (s as f64) > hi)
        {
            Some(s) => Err(format!("{what}: cluster of size {s} outside [{lo}, {hi}]")),
            None => Ok(()),
        }
    };
    let (n, d) = (2000, 8);
    let mut worst = f64::INFINITY;
    let mut runs = 0;
    for seed in 0..20u64 {
        let mut r = rng(800 + seed);
        // centers 10 within-blob standard deviations apart
        let mut dir: Vec<f64> = (0..d).map(|_| gaussian(&mut r)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v *= 5.0 / norm);
        let truth: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let mut data = Vec::with_capacity(n * d);
        for &t in &truth {
            let sign = if t == 0 { -1.0 } else { 1.0 };
            data.extend((0..d).map(|j| (sign * dir[j] + gaussian(&mut r)) as f32));
        }
        let x = EmbeddingMatrix::new(n, d, data).unwrap();
        let c = balanced_kmeans(&x, &BalanceConfig::new(n / 2, seed)).map_err(err)?;
        check_bounds(c.assignments(), n / 2, &format!("two blobs, seed {seed}"))?;
        let score = ari(c.assignments(), &truth);
        if score < 0.99 {
            return Err(format!("seed {seed}: ARI {score:.4}"));
        }
        worst = worst.min(score);
        runs += 1;

        let y = blobs(&mut r, 3000, 4, 7, 3.0);
        for avg in [5, 20, 100, 500] {
            let c = balanced_kmeans(&y, &BalanceConfig::new(avg, seed)).map_err(err)?;
            check_bounds(
                c.assignments(),
                avg,
                &format!("uneven blobs, seed {seed}, avg {avg}"),
            )?;
            runs += 1;
        }
    }
    Ok(format!(
        "{runs} runs within bounds, worst two-blob ARI {worst:.4}"
    ))
}

fn ac9(_: &mut Ctx) -> Check {
    let mut worst_angle = 0.0f64;
    let mut worst_norm = 0.0f64;
    for seed in 0..12u64 {
        let mut r = rng(900 + seed);
        let d = [8, 16, 32][seed as usize % 3];
        let k = [2, 4, 8][(seed as usize / 3) % 3].min(d);
        let latent = k + 2;
        let w: Vec<f64> = (0..d * latent).map(|_| gaussian(&mut r)).collect();
        let mut data = Vec::with_capacity(1000 * d);
        for _ in 0..1000 {
            let z: Vec<f64> = (0..latent)
                .map(|l| gaussian(&mut r) * (latent - l) as f64)
                .collect();
            for j in 0..d {
                let v: f64 = (0..latent).map(|l| w[j * latent + l] * z[l]).sum();
                data.push((v + 0.5 * gaussian(&mut r) + j as f64) as f32);
            }
        }
        let x = EmbeddingMatrix::new(1000, d, data).unwrap();
        let model = fit_pca(&x, k).map_err(err)?;
        let oracle = oracle_pca(&x, k).map_err(err)?;
        let ours: Vec<Vec<f64>> = (0..k).map(|j| model.component(j).to_vec()).collect();
        for a in principal_angles(&ours, &oracle.components) {
            worst_angle = worst_angle.max(a);
        }
        let reduced = apply_pca(&model, &x).map_err(err)?;
        for row in reduced.matrix.rows() {
            let norm = row
                .iter()
                .map(|v| f64::from(*v).powi(2))
                .sum::<f64>()
                .sqrt();
            worst_norm = worst_norm.max((norm - 1.0).abs());
        }
    }
    let detail = format!("max principal angle {worst_angle:.1e}, max |norm - 1| {worst_norm:.1e}");
    if worst_angle < 1e-6 && worst_norm <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac10(ctx: &mut Ctx) -> Check {
    let mut margins = Vec::new();
    for seed in 0..5u64 {
        let owned;
        let (p, pca): (&Planted, BTreeMap<usize, f64>) = if seed == 0 {
            let sh = ctx.shared();
            (&sh.planted, sh.pca64.clone())
        } else {
            owned = planted(seed);
            let x = reduce(
                &owned.data.corpus.embeddings["synthetic"],
                Scheme::Pca,
                64,
                seed,
            );
            let vr = SWEEP_SIZES
                .iter()
                .map(|&s| (s, kmeans_vr(&x, s, seed, &owned.loss)))
                .collect();
            (&owned, vr)
        };
        let x = reduce(&p.data.corpus.embeddings["synthetic"], Scheme::Rp, 64, seed);
        for &s in &SWEEP_SIZES {
            let rp = kmeans_vr(&x, s, seed, &p.loss);
            if pca[&s] < rp {
                return Err(format!(
                    "seed {seed}, avg size {s}: PCA {:.3} < RP {rp:.3}",
                    pca[&s]
                ));
            }
            margins.push(pca[&s] - rp);
        }
    }
    let min = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "PCA >= RP at all 25 (seed, size) pairs, smallest margin {min:.3}"
    ))
}

fn ac11(ctx: &mut Ctx) -> Check {
    let sh = ctx.shared();
    let p = &sh.planted;
    let x8 = reduce(&p.data.corpus.embeddings["synthetic"], Scheme::Pca, 8, 0);
    let mut line = Vec::new();
    for &s in &SWEEP_SIZES {
        let vr8 = kmeans_vr(&x8, s, 0, &p.loss);
        let vr64 = sh.pca64[&s];
        line.push(format!("{s}: {vr64:.2}/{vr8:.2}"));
        if vr64 < vr8 {
            return Err(format!("avg size {s}: k=64 {vr64:.3} < k=8 {vr8:.3}"));
        }
    }
    Ok(format!("k=64/k=8 VR by size {}", line.join(", ")))
}

fn ac12(_: &mut Ctx) -> Check {
    let (d, k) = (512, 64);
    let model = fit_rp(d, k, 12).map_err(err)?;
    let v = (d as f64 / k as f64).sqrt();
    let mut counts = [0usize; 3];
    for row in 0..k {
        for col in 0..d {
            let e = model.entry(row, col);
            match e {
                _ if e == 0.0 => counts[1] += 1,
                _ if (e - v).abs() < 1e-12 => counts[2] += 1,
                _ if (e + v).abs() < 1e-12 => counts[0] += 1,
                _ => return Err(format!("entry ({row}, {col}) = {e} is not in {{-v, 0, v}}")),
            }
        }
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / (d * k) as f64).collect();
    for (f, want) in freq.iter().zip([0.25, 0.5, 0.25]) {
        if (f - want).abs() > 0.02 {
            return Err(format!("entry frequencies {freq:?}"));
        }
    }

    let mut r = rng(1200);
    let pts: Vec<f32> = (0..2000 * d).map(|_| gaussian(&mut r) as f32).collect();
    let x = EmbeddingMatrix::new(2000, d, pts).unwrap();
    let proj = model.project(&x).map_err(err)?;
    // E|Rx|² = k · v² / 2 · |x|²
    let scale = (k as f64 * v * v / 2.0).sqrt();
    let mut kept = 0;
    for p in 0..1000 {
        let (a, b) = (2 * p, 2 * p + 1);
        let orig = sq_dist64(x.row(a), x.row(b)).sqrt();
        let pa = &proj[a * k..(a + 1) * k];
        let pb = &proj[b * k..(b + 1) * k];
        let projected = pa
            .iter()
            .zip(pb)
            .map(|(u, w)| (u - w).powi(2))
            .sum::<f64>()
            .sqrt();
        if ((projected / scale) / orig - 1.0).abs() <= 0.3 {
            kept += 1;
        }
    }
    let detail = format!(
        "frequencies ({:.4}, {:.4}, {:.4}), {kept}/1000 distances within 30%",
        freq[0], freq[1], freq[2]
    );
    if kept >= 950 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac13(_: &mut Ctx) -> Check {
    let pure_spec = SyntheticSpec {
        n: 4000,
        d: 16,
        k_true: 80,
        source_purity: 1.0,
        seed: 13,
        ..SyntheticSpec::default()
    };
    let pure = generate(&pure_spec).map_err(err)?;
    let p_pure = cluster_purity(&pure.planted, &pure.corpus.sources()).map_err(err)?;
    if p_pure != 1.0 {
        return Err(format!("source-pure planted clusters gave purity {p_pure}"));
    }

    let hand = Clustering::new(vec![0, 0, 0, 1, 1, 1], Provenance::External).map_err(err)?;
    let p_hand = cluster_purity(&hand, &[0, 0, 1, 1, 1, 1]).map_err(err)?;
    if p_hand != 5.0 / 6.0 {
        return Err(format!("hand example gave {p_hand}, want 5/6"));
    }

    let mut r = rng(1300);
    for _ in 0..200 {
        let n = r.gen_range(1..=2000);
        let s = r.gen_range(1..=12u32);
        let m = r.gen_range(1..=n);
        let labels: Vec<u32> = (0..n).map(|_| r.gen_range(0..m as u32)).collect();
        let sources: Vec<u32> = (0..n).map(|_| r.gen_range(0..s)).collect();
        let c = Clustering::from_labels(&labels, Provenance::External).map_err(err)?;
        let p = cluster_purity(&c, &sources).map_err(err)?;
        if p < 1.0 / f64::from(s) - 1e-12 || p > 1.0 {
            return Err(format!("purity {p} outside [1/{s}, 1]"));
        }
    }

    let spec = SyntheticSpec {
        n: 20_000,
        d: 16,
        k_true: 400,
        seed: 14,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).map_err(err)?;
    let sources = data.corpus.sources();
    let planted = cluster_purity(&data.planted, &sources).map_err(err)?;
    let random = cluster_purity(
        &random_clustering(spec.n, spec.n / spec.k_true, spec.seed),
        &sources,
    )
    .map_err(err)?;
    let detail =
        format!("pure 1.0, hand 5/6, 200 bounded runs, planted {planted:.3} vs random {random:.3}");
    if planted > random {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac14(_: &mut Ctx) -> Check {
    let grids: [&[f64]; 5] = [
        &[1e-12],
        &[1e-9, 1e-6, 1e-3],
        &[0.01, 0.05, 0.1, 0.2],
        &[0.05, 0.2, 0.5, 1.0],
        &[0.3, 0.6, 1.0],
    ];
    let (mut plans, mut infeasible) = (0, 0);
    for seed in 0..3u64 {
        let spec = SyntheticSpec {
            n: 5000,
            d: 64,
            k_true: 250,
            duplicate_fraction: 0.1,
            seed: 1400 + seed,
            ..SyntheticSpec::default()
        };
        let data = generate(&spec).map_err(err)?;
        let corpus = &data.corpus;
        let x = reduce(&corpus.embeddings["synthetic"], Scheme::Pca, 32, seed);
        let dendro = build_dendrogram(&x, 1.0).map_err(err)?;
        let ids = corpus.ids();
        let pairs: Vec<(u64, u64)> = data
            .duplicates
            .iter()
            .map(|&(a, b)| (ids[a], ids[b]))
            .collect();
        if pairs.len() != spec.num_duplicates() {
            return Err(format!(
                "expected {} duplicates, got {}",
                spec.num_duplicates(),
                pairs.len()
            ));
        }
        let total: u64 = corpus.token_counts().iter().sum();
        for grid in grids {
            let g = EpsilonGrid::new(grid.to_vec()).map_err(err)?;
            for &eps in grid {
                let cut = dendro.cut(eps);
                let a = cut.assignments();
                if let Some(&(o, c)) = data.duplicates.iter().find(|&&(o, c)| a[o] != a[c]) {
                    return Err(format!("rows {o} and {c} are split at eps {eps}"));
                }
            }
            for frac in [0.05, 0.3, 0.6, 0.85] {
                for rule in [BudgetRule::Tokens, BudgetRule::ByCount] {
                    for overshoot in [Overshoot::Drop, Overshoot::Allow] {
                        let budget = (frac * total as f64) as u64;
                        let plan = match curate(
                            corpus,
                            &x,
                            &dendro,
                            &g,
                            budget,
                            CurateOptions { rule, overshoot },
                        ) {
                            Ok(p) => p,
                            Err(CurateError::GridExhausted { .. })
                            | Err(CurateError::Cluster(ClusterError::GridExhausted { .. })) => {
                                infeasible += 1;
                                continue;
                            }
                            Err(e) => return Err(err(e)),
                        };
                        let chosen: std::collections::HashSet<u64> =
                            plan.selected_ids.iter().copied().collect();
                        if let Some((o, c)) = pairs
                            .iter()
                            .find(|(o, c)| chosen.contains(o) && chosen.contains(c))
                        {
                            return Err(format!(
                                "plan at eps {:?} holds both {o} and {c}",
                                plan.epsilon_chosen
                            ));
                        }
                        plans += 1;
                    }
                }
            }
        }
    }
    if plans == 0 {
        return Err("no feasible plan was produced".into());
    }
    Ok(format!(
        "{plans} plans without a duplicated pair ({infeasible} budgets beyond the grid)"
    ))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                stack.push(e);
            } else {
                out.insert(
                    e.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&e).unwrap(),
                );
            }
        }
    }
    out
}

fn ac15(_: &mut Ctx) -> Check {
    let limit = Duration::from_secs(300);
    let dir = tempfile::tempdir().map_err(err)?;
    let mut runs: Vec<(usize, Duration, BTreeMap<PathBuf, Vec<u8>>)> = Vec::new();
    for threads in [8, 4, 1] {
        let mut cfg = PipelineConfig {
            output_dir: dir.path().join(format!("t{threads}")),
            synthetic: Some(SyntheticSpec {
                n: 100_000,
                d: 512,
                k_true: 2000,
                steps: vec![1000, 26_000],
                duplicate_fraction: 0.05,
                ..SyntheticSpec::default()
            }),
            ..PipelineConfig::default()
        };
        cfg.reduce.k = 64;
        cfg.rac.epsilon_grid = Some(vec![0.05, 0.1, 0.2, 0.3]);
        cfg.curate.budget_tokens = Some(5_000_000);
        let t = Instant::now();
        let outcome = with_threads(Some(threads), || run_pipeline(&cfg))
            .map_err(err)?
            .map_err(|e| format!("{e:#}"))?;
        let elapsed = t.elapsed();
        if !outcome.skipped.is_empty() {
            return Err(format!("fresh run skipped stages {:?}", outcome.skipped));
        }
        runs.push((threads, elapsed, tree(&outcome.output_dir)));
    }
    let timings: Vec<String> = runs
        .iter()
        .map(|(t, e, _)| format!("{t} threads {:.0}s", e.as_secs_f64()))
        .collect();
    let reference = &runs[0].2;
    for (threads, _, files) in &runs[1..] {
        if files != reference {
            let differ: Vec<_> = reference
                .iter()
                .filter(|(p, b)| files.get(*p) != Some(*b))
                .map(|(p, _)| p.display().to_string())
                .collect();
            return Err(format!(
                "{threads} threads differ from 8 threads in {differ:?}"
            ));
        }
    }
    let detail = format!(
        "{} files bit-identical; {}",
        reference.len(),
        timings.join(", ")
    );
    if runs.iter().all(|(_, e, _)| *e < limit) {
        Ok(detail)
    } else {
        Err(format!("over the 5 minute limit: {detail}"))
    }
}

type Criterion = (&'static str, Option<u64>, fn(&mut Ctx) -> Check);

fn main() {
    let criteria: [Criterion; 15] = [
        ("AC1", Some(5), ac1),
        ("AC2", Some(60), ac2),
        ("AC3", Some(120), ac3),
        ("AC4", Some(120), ac4),
        ("AC5", Some(60), ac5),
        ("AC6", Some(30), ac6),
        ("AC7", Some(30), ac7),
        ("AC8", Some(60), ac8),
        ("AC9", Some(10), ac9),
        ("AC10", Some(180), ac10),
        ("AC11", Some(120), ac11),
        ("AC12", Some(10), ac12),
        ("AC13", Some(30), ac13),
        ("AC14", Some(60), ac14),
        // timed per run inside the check
        ("AC15", None, ac15),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.to_ascii_uppercase().starts_with("AC"))
        .map(|a| a.to_ascii_uppercase())
        .collect();

    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut ctx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = t.elapsed().as_secs_f64();
        let result = match (result, limit) {
            (Ok(d), Some(l)) if elapsed > l as f64 => Err(format!("over the {l}s limit; {d}")),
            (r, _) => r,
        };
        match result {
            Ok(d) => println!("{name:<5} PASS  {elapsed:>7.1}s  {d}"),
            Err(d) => {
                failed += 1;
                println!("{name:<5} FAIL  {elapsed:>7.1}s  {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
