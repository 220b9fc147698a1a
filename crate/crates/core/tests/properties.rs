use std::fs;

use larag::alignment::Pooling;
use larag::datastore::{build, CorpusItem, Datastore};
use larag::datastore::{ENTRIES_FILE, META_FILE, SEQUENCES_FILE, TEXTS_FILE};
use larag::evaluation::{
    cer, run_synthetic_benchmark, BenchConfig, BenchReport, CerOptions, Strategy, SynthCorpusParams,
};
use larag::prompt::{
    assemble_prompt, load_prompt, serialize_prompt, Activation, AdapterWeights, PromptSegment,
};
use larag::retrieval::NBestList;
use larag::tensor::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_items(rng: &mut ChaCha8Rng, dim: usize) -> Vec<CorpusItem> {
    let n = rng.random_range(1..=12);
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=9);
            let data = (0..len * dim)
                .map(|_| rng.random_range(-3.0f32..3.0))
                .collect();
            CorpusItem::Pretokenized {
                utterance_id: format!("utt-{i}"),
                embeddings: Matrix::new(len, dim, data).unwrap(),
                tokens: (0..len).map(|_| rng.random_range(1..5000)).collect(),
                text: format!("第{i}句 text"),
                source_tag: ["a", "b", "c"][i % 3].into(),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn datastores_round_trip_bit_exactly(seed in any::<u64>(), dim in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ds, _) = build(random_items(&mut rng, dim), Pooling::Mean).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        ds.save(&a).unwrap();
        let back = Datastore::load(&a).unwrap();
        prop_assert_eq!(&back, &ds);
        let bits = |m: &Matrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.normalized_keys()), bits(ds.normalized_keys()));
        for (x, y) in back.sequences().iter().zip(ds.sequences()) {
            prop_assert_eq!(bits(&x.embeddings), bits(&y.embeddings));
        }
        back.save(&b).unwrap();
        for f in [META_FILE, SEQUENCES_FILE, ENTRIES_FILE, TEXTS_FILE] {
            prop_assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prompts_follow_the_layout_law(seed in any::<u64>(), m in 0usize..=6, n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..6);
        let (ds, _) = build(random_items(&mut rng, dim), Pooling::Mean).unwrap();
        let examples: Vec<_> = (0..m).map(|i| &ds.sequences()[i % ds.sequences().len()]).collect();
        let adapter = AdapterWeights::random(dim, 8, 5, Activation::Gelu, seed);
        let input = Matrix::new(3, dim, (0..3 * dim).map(|i| i as f32 * 0.1).collect()).unwrap();
        let hyps = (0..n).map(|h| vec![h as u32 + 1; rng.random_range(1..5)]).collect();
        let layout = assemble_prompt(&examples, &adapter, &input, &NBestList::new(hyps).unwrap()).unwrap();

        let segs = layout.segments();
        prop_assert_eq!(segs.len(), 2 * m + 1 + n);
        for (i, seg) in segs.iter().enumerate() {
            let ok = match seg {
                PromptSegment::ExampleSpeech { example, embeddings } => {
                    i < 2 * m && i % 2 == 0 && *example == i / 2 && embeddings.cols() == 5
                }
                PromptSegment::ExampleText { example, tokens } => {
                    i < 2 * m && i % 2 == 1 && *example == i / 2 && *tokens == examples[i / 2].tokens
                }
                PromptSegment::InputSpeech { embeddings } => i == 2 * m && embeddings.rows() == 3,
                PromptSegment::Hypothesis { rank, .. } => i > 2 * m && *rank == i - 2 * m - 1,
            };
            prop_assert!(ok, "segment {i} is {} in a prompt with M={m}", seg.kind_name());
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        serialize_prompt(&layout, &path).unwrap();
        prop_assert_eq!(load_prompt(&path).unwrap(), layout);
    }
}

/// Full DP table plus backtrace (diagonal, then deletion, then insertion).
fn cer_oracle(hyp: &[char], reference: &[char]) -> (usize, usize, usize) {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut s, mut ins, mut del) = (0, 0, 0);
    while i > 0 || j > 0 {
        if i > 0
            && j > 0
            && d[i][j] == d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1])
        {
            s += usize::from(reference[i - 1] != hyp[j - 1]);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    (s, ins, del)
}

#[test]
fn cer_matches_dp_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let alphabet: Vec<char> = "abc的是了一 ".chars().collect();
    for _ in 0..500 {
        let (hn, rn) = (rng.random_range(0..12), rng.random_range(1..12));
        let mut s = |n: usize| -> String {
            (0..n)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect()
        };
        let (h, r) = (s(hn), s(rn));
        let report = cer(&h, &r, CerOptions::default()).unwrap();
        let hc: Vec<char> = h.chars().collect();
        let rc: Vec<char> = r.chars().collect();
        let (sub, ins, del) = cer_oracle(&hc, &rc);
        assert_eq!(
            (report.substitutions, report.insertions, report.deletions),
            (sub, ins, del),
            "{h:?} vs {r:?}"
        );
        assert_eq!(report.cer, (sub + ins + del) as f64 / rc.len() as f64);
    }
}

#[test]
fn benchmark_is_deterministic() {
    let params = SynthCorpusParams {
        n_base_sequences: 30,
        noise_sigma: 0.3,
        ..SynthCorpusParams::default()
    };
    let run = || {
        let mut r: BenchReport =
            run_synthetic_benchmark(&params, &Strategy::ALL, &BenchConfig::default()).unwrap();
        r.rows.iter_mut().for_each(|row| row.wall_clock_ms = 0.0);
        r
    };
    assert_eq!(run(), run());
}

#[test]
fn random_baseline_hits_one_in_b() {
    let bases = 50;
    let params = SynthCorpusParams {
        n_base_sequences: bases,
        n_variants_per_base: 24,
        distractors_per_base: 0,
        seed: 8,
        ..SynthCorpusParams::default()
    };
    let cfg = BenchConfig {
        max_examples: 1,
        seed: 8,
        ..BenchConfig::default()
    };
    let r = run_synthetic_benchmark(&params, &[Strategy::Random], &cfg).unwrap();
    let row = &r.rows[0];
    let p = 1.0 / bases as f64;
    let sd = (p * (1.0 - p) / row.queries as f64).sqrt();
    assert!(row.queries >= 1000);
    assert!(
        (row.recall_at_1 - p).abs() <= 3.0 * sd,
        "recall {} vs {p} ± {}",
        row.recall_at_1,
        3.0 * sd
    );
}

#[test]
fn token_level_beats_mean_embedding_on_half_shared_distractors() {
    let params = SynthCorpusParams {
        noise_sigma: 0.3,
        ..SynthCorpusParams::default()
    };
    let r = run_synthetic_benchmark(
        &params,
        &[Strategy::TokenLevel, Strategy::SeqEmbedding],
        &BenchConfig::default(),
    )
    .unwrap();
    let tok = r.row(Strategy::TokenLevel).unwrap().recall_at_1;
    let seq = r.row(Strategy::SeqEmbedding).unwrap().recall_at_1;
    assert!(tok >= seq, "token_level {tok} < seq_embedding {seq}");
}
