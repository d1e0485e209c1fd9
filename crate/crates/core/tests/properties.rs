//! Property tests for the invariants of each module, driven through the
//! public API only.

use std::collections::{BTreeMap, HashSet};

use embcurate::cluster::{
    balanced_kmeans_run, build_dendrogram, max_cluster_diameter, BalanceConfig, Clustering,
    EpsilonGrid, Provenance,
};
use embcurate::corpus::{
    pack_documents, read_embeddings, read_metadata, write_embeddings, write_metadata, Corpus,
    EmbeddingMatrix, ExampleRecord,
};
use embcurate::curate::{curate, select_representatives, BudgetRule, CurateOptions, Overshoot};
use embcurate::distance::sq_dist;
use embcurate::metrics::variance_reduction_values;
use embcurate::reduce::{fit, fit_pca, fit_rp, Scheme};
use embcurate::testkit::{generate, SyntheticSpec};
use proptest::prelude::*;

fn matrix(n: usize, d: usize) -> impl Strategy<Value = EmbeddingMatrix> {
    prop::collection::vec(-10.0f32..10.0, n * d)
        .prop_map(move |v| EmbeddingMatrix::new(n, d, v).unwrap())
}

fn sized_matrix(max_n: usize, max_d: usize) -> impl Strategy<Value = EmbeddingMatrix> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| matrix(n, d))
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn embedding_file_round_trip(x in sized_matrix(40, 12)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.emb");
        write_embeddings(&p, &x).unwrap();
        prop_assert_eq!(read_embeddings(&p).unwrap(), x);
    }

    #[test]
    fn metadata_file_round_trip(
        recs in prop::collection::btree_map(
            any::<u64>(),
            (0u32..50, 1u64..100_000, prop::collection::btree_map(0u64..1_000_000, -1e6f64..1e6, 0..4)),
            1..30,
        )
    ) {
        let records: Vec<ExampleRecord> = recs
            .into_iter()
            .map(|(id, (source, token_count, losses))| ExampleRecord { id, source, token_count, losses })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_metadata(&p, &records).unwrap();
        prop_assert_eq!(read_metadata(&p).unwrap(), records);
    }

    #[test]
    fn packing_has_one_eod_per_completed_document(
        docs in prop::collection::vec(prop::collection::vec(2u32..50, 1..40), 1..20),
        seq_len in 2usize..64,
    ) {
        let packed = pack_documents(&docs, seq_len, 0, 1).unwrap();
        let stream: Vec<u32> = packed.iter().flat_map(|p| p.tokens.iter().copied()).collect();
        let content: Vec<u32> = stream.iter().copied().filter(|&t| t > 1).collect();
        prop_assert_eq!(content, docs.concat());
        prop_assert_eq!(stream.iter().filter(|&&t| t == 0).count(), docs.len());
        for p in &packed {
            prop_assert_eq!(p.tokens.len(), seq_len);
        }
    }

    #[test]
    fn pca_components_orthonormal_and_rows_unit(x in (8usize..60, 2usize..10).prop_flat_map(|(n, d)| matrix(n, d)), k in 1usize..4) {
        let k = k.min(x.d());
        let m = fit_pca(&x, k).unwrap();
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = m.component(i).iter().zip(m.component(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-6, "<c{},c{}> = {}", i, j, dot);
            }
        }
        let ev = m.explained_variance();
        prop_assert!(ev.windows(2).all(|w| w[0] >= w[1] - 1e-9));
        let red = fit(Scheme::Pca, &x, k, usize::MAX, 0).unwrap().apply(&x).unwrap();
        for (i, row) in red.matrix.rows().enumerate() {
            prop_assert!(row.iter().all(|v| v.is_finite()));
            if !red.degenerate_rows.contains(&i) {
                let norm: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rp_rows_unit_and_seeded(x in sized_matrix(30, 20), k in 1usize..8, seed in any::<u64>()) {
        let a = fit_rp(x.d(), k, seed).unwrap();
        prop_assert_eq!(&a, &fit_rp(x.d(), k, seed).unwrap());
        let red = fit(Scheme::Rp, &x, k, 0, seed).unwrap().apply(&x).unwrap();
        for (i, row) in red.matrix.rows().enumerate() {
            if !red.degenerate_rows.contains(&i) {
                let norm: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-6);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kmeans_bounds_objective_and_determinism(
        x in (20usize..200, 1usize..6).prop_flat_map(|(n, d)| matrix(n, d)),
        avg in 5usize..20,
        seed in any::<u64>(),
    ) {
        let cfg = BalanceConfig { avg_size: avg, seed, ..BalanceConfig::default() };
        let run = balanced_kmeans_run(&x, &cfg).unwrap();
        let (lo, hi) = cfg.size_bounds(x.n());
        for s in run.clustering.sizes() {
            prop_assert!(s >= lo && s <= hi, "size {} outside [{}, {}]", s, lo, hi);
        }
        prop_assert!(run.objective_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-9));
        let again = in_pool(3, || balanced_kmeans_run(&x, &cfg).unwrap());
        prop_assert_eq!(run.clustering.assignments(), again.clustering.assignments());
    }

    #[test]
    fn rac_diameter_nesting_and_merge_order(
        x in (2usize..120, 1usize..5).prop_flat_map(|(n, d)| matrix(n, d)),
        raw in prop::collection::btree_set(1u32..4000, 1..6),
    ) {
        let grid = EpsilonGrid::new(raw.into_iter().map(|v| f64::from(v) / 10.0).collect()).unwrap();
        let dendro = build_dendrogram(&x, grid.max()).unwrap();
        prop_assert!(dendro.merges().windows(2).all(|w| w[0].height <= w[1].height));
        prop_assert!(dendro.merges().len() < x.n());
        let cuts: Vec<Clustering> = grid.values().iter().map(|&e| dendro.cut(e)).collect();
        for (c, &eps) in cuts.iter().zip(grid.values()) {
            prop_assert!(max_cluster_diameter(&x, c) <= eps);
        }
        for w in cuts.windows(2) {
            prop_assert!(w[0].num_clusters() >= w[1].num_clusters());
            prop_assert!(w[0].refines(&w[1]));
        }
    }

    #[test]
    fn rac_duplicates_share_clusters(
        x in (2usize..60, 1usize..4).prop_flat_map(|(n, d)| matrix(n, d)),
        copies in prop::collection::vec(any::<prop::sample::Index>(), 1..10),
        eps in 1e-6f64..5.0,
    ) {
        let mut rows: Vec<Vec<f32>> = x.rows().map(<[f32]>::to_vec).collect();
        let pairs: Vec<(usize, usize)> = copies
            .iter()
            .map(|ix| {
                let src = ix.index(x.n());
                rows.push(rows[src].clone());
                (src, rows.len() - 1)
            })
            .collect();
        let y = EmbeddingMatrix::from_rows(&rows).unwrap();
        let c = build_dendrogram(&y, eps).unwrap().cut(eps);
        for (a, b) in pairs {
            prop_assert_eq!(c.assignments()[a], c.assignments()[b]);
        }
    }

    #[test]
    fn vr_independent_of_thread_count(
        labels in prop::collection::vec(0u32..30, 2..3000),
        seed in any::<u64>(),
    ) {
        let c = Clustering::from_labels(&labels, Provenance::External).unwrap();
        let losses: Vec<f64> = (0..labels.len())
            .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 7.0 + 1e6)
            .collect();
        let one = in_pool(1, || variance_reduction_values(&c, &losses));
        let many = in_pool(5, || variance_reduction_values(&c, &losses));
        match (one, many) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
            (a, b) => prop_assert_eq!(format!("{a:?}"), format!("{b:?}")),
        }
    }

    #[test]
    fn representatives_are_centroid_nearest(
        x in (2usize..80, 1usize..5).prop_flat_map(|(n, d)| matrix(n, d)),
        m in 1u32..10,
        seed in any::<u64>(),
    ) {
        let labels: Vec<u32> = (0..x.n()).map(|i| ((i as u64 ^ seed) % u64::from(m)) as u32).collect();
        let c = Clustering::from_labels(&labels, Provenance::External).unwrap();
        let ids: Vec<u64> = (0..x.n() as u64).map(|i| i * 3 + 1).collect();
        let reps = select_representatives(&c, &x, &ids).unwrap();
        prop_assert_eq!(reps.len(), c.num_clusters());
        for (r, members) in reps.iter().zip(c.members()) {
            let d = x.d();
            let mut centroid = vec![0.0f64; d];
            for &i in &members {
                for (a, &v) in centroid.iter_mut().zip(x.row(i)) {
                    *a += f64::from(v) / members.len() as f64;
                }
            }
            let dist = |i: usize| -> f64 {
                x.row(i).iter().zip(&centroid).map(|(&v, c)| (f64::from(v) - c).powi(2)).sum()
            };
            prop_assert!(members.contains(&r.row));
            let best = members.iter().map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
            prop_assert!(dist(r.row) <= best + 1e-9 * (1.0 + best));
        }
    }

    #[test]
    fn curation_respects_budget_and_is_a_subset(
        x in (5usize..80, 1usize..4).prop_flat_map(|(n, d)| matrix(n, d)),
        tokens in prop::collection::vec(1u64..500, 80),
        frac in 0.01f64..0.6,
        allow in any::<bool>(),
        by_count in any::<bool>(),
    ) {
        let n = x.n();
        let records: Vec<ExampleRecord> = (0..n)
            .map(|i| ExampleRecord { id: 1000 + i as u64, source: 0, token_count: tokens[i], losses: BTreeMap::new() })
            .collect();
        let corpus = Corpus::new(records, BTreeMap::new()).unwrap();
        let total: u64 = tokens[..n].iter().sum();
        let budget = ((total as f64 * frac) as u64).max(1);
        let grid = EpsilonGrid::new(vec![1e-3, 0.5, 5.0, 50.0]).unwrap();
        let dendro = build_dendrogram(&x, grid.max()).unwrap();
        let options = CurateOptions {
            rule: if by_count { BudgetRule::ByCount } else { BudgetRule::Tokens },
            overshoot: if allow { Overshoot::Allow } else { Overshoot::Drop },
        };
        let Ok(plan) = curate(&corpus, &x, &dendro, &grid, budget, options) else {
            return Ok(());
        };
        let max_tok = *tokens[..n].iter().max().unwrap();
        if allow {
            prop_assert!(plan.token_total <= budget + max_tok);
        } else {
            prop_assert!(plan.token_total <= budget);
        }
        let ids: HashSet<u64> = corpus.ids().into_iter().collect();
        let mut seen = HashSet::new();
        for id in &plan.selected_ids {
            prop_assert!(ids.contains(id));
            prop_assert!(seen.insert(*id));
        }
        let sum: u64 = plan.selected_ids.iter().map(|id| tokens[(id - 1000) as usize]).sum();
        prop_assert_eq!(sum, plan.token_total);
    }
}

#[test]
fn generated_corpus_round_trips_through_files() {
    let spec = SyntheticSpec {
        n: 500,
        d: 8,
        k_true: 10,
        steps: vec![10, 20],
        duplicate_fraction: 0.1,
        noise_model_tag: Some("noise".into()),
        ..SyntheticSpec::default()
    };
    let s = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = dir.path().join("m.jsonl");
    write_metadata(&meta, &s.corpus.records).unwrap();
    let mut embeddings = BTreeMap::new();
    for (tag, x) in &s.corpus.embeddings {
        let p = dir.path().join(format!("{tag}.emb"));
        write_embeddings(&p, x).unwrap();
        embeddings.insert(tag.clone(), read_embeddings(&p).unwrap());
    }
    let back = Corpus::new(read_metadata(&meta).unwrap(), embeddings).unwrap();
    assert_eq!(back.records, s.corpus.records);
    assert_eq!(back.embeddings, s.corpus.embeddings);
    assert_eq!(back.checkpoint_steps, vec![10, 20]);
    for &(a, b) in &s.duplicates {
        assert_eq!(
            sq_dist(
                back.embeddings["synthetic"].row(a),
                back.embeddings["synthetic"].row(b)
            ),
            0.0
        );
    }
}
