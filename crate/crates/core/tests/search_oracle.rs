use larag::alignment::Pooling;
use larag::datastore::{build, CorpusItem, Datastore};
use larag::tensor::Matrix;
use larag::vector_index::{ExactIndex, IvfIndex, IvfParams, NeighborSearch};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_store(
    rng: &mut ChaCha8Rng,
    seqs: usize,
    len: usize,
    dim: usize,
) -> (Datastore, Vec<Vec<f32>>) {
    let mut raw = Vec::new();
    let items: Vec<CorpusItem> = (0..seqs)
        .map(|i| {
            let rows: Vec<Vec<f32>> = (0..len)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
                .collect();
            raw.extend(rows.iter().cloned());
            CorpusItem::Pretokenized {
                utterance_id: format!("s{i}"),
                embeddings: Matrix::from_rows(&rows, dim).unwrap(),
                tokens: (1..=len as u32).collect(),
                text: String::new(),
                source_tag: "rand".into(),
            }
        })
        .collect();
    (build(items, Pooling::Mean).unwrap().0, raw)
}

/// Cosine straight from the raw vectors, in f64.
fn brute_force(raw: &[Vec<f32>], q: &[f32], k: usize) -> Vec<(usize, f64)> {
    let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut all: Vec<(usize, f64)> = raw
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let dot: f64 = v.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).sum();
            (i, dot / (norm(v) * qn))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_matches_brute_force(seed in any::<u64>(), k in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ds, raw) = random_store(&mut rng, 30, 5, 8);
        let index = ExactIndex::build(&ds).unwrap();
        for _ in 0..10 {
            let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let got = index.search(&q, k).unwrap();
            let all = brute_force(&raw, &q, raw.len());
            let want = &all[..k.min(all.len())];
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(want) {
                prop_assert!((g.similarity - w.1).abs() <= 1e-6);
                // order may only differ inside groups of near-equal similarity
                let own = all.iter().find(|x| x.0 == g.entry).unwrap().1;
                prop_assert!((own - w.1).abs() <= 1e-6);
                let r = ds.entry_refs()[g.entry];
                prop_assert_eq!((r.seq_id, r.position), (g.seq_id, g.position));
            }
        }
    }

    #[test]
    fn full_probe_ivf_equals_exact(seed in any::<u64>(), clusters in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ds, _) = random_store(&mut rng, 25, 6, 6);
        let exact = ExactIndex::build(&ds).unwrap();
        let params = IvfParams { n_clusters: clusters, n_probe: clusters, kmeans_seed: seed, kmeans_iters: 10 };
        let ivf = IvfIndex::build(&ds, params).unwrap();
        for _ in 0..10 {
            let q: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            prop_assert_eq!(ivf.search(&q, 20).unwrap(), exact.search(&q, 20).unwrap());
        }
    }

    #[test]
    fn ivf_recall_grows_with_probes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ds, _) = random_store(&mut rng, 40, 5, 6);
        let exact = ExactIndex::build(&ds).unwrap();
        let ivf = IvfIndex::build(&ds, IvfParams::for_entry_count(ds.len(), seed)).unwrap();
        let c = ivf.params().n_clusters;
        for _ in 0..5 {
            let q: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let truth: Vec<usize> = exact.search(&q, 16).unwrap().iter().map(|n| n.entry).collect();
            let mut prev = 0;
            for p in 1..=c {
                let got = ivf.search_probed(&q, 16, p).unwrap();
                let hits = got.iter().filter(|n| truth.contains(&n.entry)).count();
                prop_assert!(hits >= prev, "recall fell from {prev} to {hits} at n_probe {p}");
                prev = hits;
            }
            prop_assert_eq!(prev, truth.len());
        }
    }
}

#[test]
fn ivf_is_deterministic_and_persists() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (ds, _) = random_store(&mut rng, 50, 6, 8);
    let params = IvfParams::for_entry_count(ds.len(), 11);
    let a = IvfIndex::build(&ds, params).unwrap();
    let b = IvfIndex::build(&ds, params).unwrap();
    assert_eq!(a.assignments(), b.assignments());
    assert_eq!(a.centroids(), b.centroids());

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let back = IvfIndex::load(dir.path(), &ds).unwrap();
    assert_eq!(back.assignments(), a.assignments());
    assert_eq!(back.params(), a.params());
    let q = vec![0.3f32; 8];
    assert_eq!(back.search(&q, 10).unwrap(), a.search(&q, 10).unwrap());
}
