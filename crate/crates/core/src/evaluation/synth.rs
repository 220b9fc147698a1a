//! Seeded synthetic corpora with known ground truth.
//!
//! Base sequences have unit-norm random token embeddings. Each query is a
//! noisy copy of one base (per-token isotropic Gaussian noise with total
//! expected norm `noise_sigma`, then renormalized). Distractors copy a
//! subset of a base's tokens (ids plus independently noised embeddings)
//! and fill the rest with fresh random tokens, so they partially match the
//! base's queries.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::CorpusItem;
use crate::error::{Error, Result};
use crate::manifest::{write_jsonl, ManifestRecord};
use crate::retrieval::{NBestList, NBestRecord};
use crate::tensor::{write_matrix, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusParams {
    pub n_base_sequences: usize,
    pub tokens_per_sequence: usize,
    pub dim: usize,
    /// Queries generated per base.
    pub n_variants_per_base: usize,
    pub noise_sigma: f64,
    /// Token ids are drawn from `1..=vocab_size`; 0 stays free for blank.
    pub vocab_size: u32,
    pub seed: u64,
    pub distractors_per_base: usize,
    pub distractor_shared_tokens: usize,
    /// Noise on the embeddings a distractor copies from its base. Must be
    /// positive so distractors never tie with the base exactly.
    pub distractor_sigma: f64,
    /// Hypotheses per query N-best list.
    pub nbest_size: usize,
    /// Positions per query where hypothesis 0 is wrong and the list disagrees.
    pub error_positions: usize,
}

impl Default for SynthCorpusParams {
    fn default() -> Self {
        Self {
            n_base_sequences: 100,
            tokens_per_sequence: 8,
            dim: 32,
            n_variants_per_base: 1,
            noise_sigma: 0.2,
            vocab_size: 1000,
            seed: 0,
            distractors_per_base: 10,
            distractor_shared_tokens: 4,
            distractor_sigma: 1.0,
            nbest_size: 5,
            error_positions: 4,
        }
    }
}

impl SynthCorpusParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::InvalidParams(why));
        if self.n_base_sequences == 0
            || self.tokens_per_sequence == 0
            || self.n_variants_per_base == 0
        {
            return bad("sequence, token and variant counts must be at least 1".into());
        }
        if self.nbest_size == 0 {
            return bad("nbest_size must be at least 1".into());
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.distractor_sigma > 0.0 && self.distractor_sigma.is_finite()) {
            return bad(format!(
                "distractor_sigma must be finite and > 0, got {}",
                self.distractor_sigma
            ));
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2".into());
        }
        if self.distractor_shared_tokens > self.tokens_per_sequence
            || self.error_positions > self.tokens_per_sequence
        {
            return bad("shared/error positions exceed tokens_per_sequence".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthQuery {
    pub utterance_id: String,
    pub embeddings: Matrix,
    pub nbest: NBestList,
    /// seq_id of the originating base once the corpus is built in order.
    pub target_seq: u32,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Datastore corpus; seq_id of item `i` is `i`.
    pub items: Vec<CorpusItem>,
    pub queries: Vec<SynthQuery>,
    pub base_seq_ids: Vec<u32>,
}

struct Sequence {
    tokens: Vec<u32>,
    rows: Vec<Vec<f32>>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// `v + noise`, renormalized; noise has per-coordinate std `sigma / sqrt(d)`.
/// `sigma == 0` returns `v` untouched.
pub fn perturb(rng: &mut ChaCha8Rng, v: &[f32], sigma: f64) -> Vec<f32> {
    if sigma == 0.0 {
        return v.to_vec();
    }
    let scale = sigma / (v.len() as f64).sqrt();
    let w: Vec<f64> = v
        .iter()
        .map(|&x| x as f64 + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    w.into_iter().map(|x| (x / norm) as f32).collect()
}

fn render(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn other_token(rng: &mut ChaCha8Rng, vocab: u32, not: u32) -> u32 {
    loop {
        let t = rng.random_range(1..=vocab);
        if t != not {
            return t;
        }
    }
}

pub fn synth_corpus(params: &SynthCorpusParams) -> Result<SynthCorpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (len, dim, vocab) = (params.tokens_per_sequence, params.dim, params.vocab_size);

    let bases: Vec<Sequence> = (0..params.n_base_sequences)
        .map(|_| Sequence {
            tokens: (0..len).map(|_| rng.random_range(1..=vocab)).collect(),
            rows: (0..len).map(|_| unit_vector(&mut rng, dim)).collect(),
        })
        .collect();

    // (origin, sequence, utterance id); origin Some(b) marks base b itself
    let mut pool: Vec<(Option<usize>, Sequence, String)> = Vec::new();
    for (b, base) in bases.iter().enumerate() {
        for j in 0..params.distractors_per_base {
            let shared =
                rand::seq::index::sample(&mut rng, len, params.distractor_shared_tokens).into_vec();
            let mut seq = Sequence {
                tokens: (0..len).map(|_| rng.random_range(1..=vocab)).collect(),
                rows: (0..len).map(|_| unit_vector(&mut rng, dim)).collect(),
            };
            for p in shared {
                seq.tokens[p] = base.tokens[p];
                seq.rows[p] = perturb(&mut rng, &base.rows[p], params.distractor_sigma);
            }
            pool.push((None, seq, format!("distractor-{b}-{j}")));
        }
        pool.push((
            Some(b),
            Sequence {
                tokens: base.tokens.clone(),
                rows: base.rows.clone(),
            },
            format!("base-{b}"),
        ));
    }
    pool.shuffle(&mut rng);

    let mut base_seq_ids = vec![0u32; bases.len()];
    let mut items = Vec::with_capacity(pool.len());
    for (i, (origin, seq, id)) in pool.into_iter().enumerate() {
        if let Some(b) = origin {
            base_seq_ids[b] = i as u32;
        }
        items.push(CorpusItem::Pretokenized {
            utterance_id: id,
            embeddings: Matrix::from_rows(&seq.rows, dim)?,
            text: render(&seq.tokens),
            tokens: seq.tokens,
            source_tag: if origin.is_some() {
                "base".into()
            } else {
                "distractor".into()
            },
        });
    }

    let mut queries = Vec::with_capacity(bases.len() * params.n_variants_per_base);
    for (b, base) in bases.iter().enumerate() {
        for v in 0..params.n_variants_per_base {
            let rows: Vec<Vec<f32>> = base
                .rows
                .iter()
                .map(|r| perturb(&mut rng, r, params.noise_sigma))
                .collect();
            let errors = rand::seq::index::sample(&mut rng, len, params.error_positions).into_vec();
            let mut hyp0 = base.tokens.clone();
            for &p in &errors {
                hyp0[p] = other_token(&mut rng, vocab, base.tokens[p]);
            }
            let mut hypotheses = vec![hyp0.clone()];
            for n in 1..params.nbest_size {
                let mut h = hyp0.clone();
                for &p in &errors {
                    // the runner-up hypothesis carries the correct token
                    h[p] = if n == 1 {
                        base.tokens[p]
                    } else {
                        rng.random_range(1..=vocab)
                    };
                }
                hypotheses.push(h);
            }
            queries.push(SynthQuery {
                utterance_id: format!("query-{b}-{v}"),
                embeddings: Matrix::from_rows(&rows, dim)?,
                nbest: NBestList::new(hypotheses)?,
                target_seq: base_seq_ids[b],
            });
        }
    }

    Ok(SynthCorpus {
        items,
        queries,
        base_seq_ids,
    })
}

/// Ground-truth line written next to a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub utterance_id: String,
    pub target_utterance: String,
    pub target_seq: u32,
}

impl SynthCorpus {
    /// Writes the corpus in the pre-tokenized ingestion format:
    /// `datastore.jsonl`, `queries.jsonl`, `nbest.jsonl`, `truth.jsonl` and
    /// tensors under `features/`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let feats = dir.join("features");
        fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;

        let mut store = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let CorpusItem::Pretokenized {
                utterance_id,
                embeddings,
                tokens,
                text,
                source_tag,
            } = item
            else {
                unreachable!("synthetic corpora are pre-tokenized");
            };
            let rel = format!("features/{utterance_id}.bin");
            write_matrix(dir.join(&rel), embeddings)?;
            store.push(ManifestRecord {
                utterance_id: utterance_id.clone(),
                tokenized: true,
                features: rel,
                logits: None,
                transcript: tokens.clone(),
                text: text.clone(),
                source_tag: source_tag.clone(),
                blank_id: None,
                tokenizer: None,
            });
        }
        write_jsonl(dir.join("datastore.jsonl"), &store)?;

        let mut queries = Vec::new();
        let mut nbest = Vec::new();
        let mut truth = Vec::new();
        for q in &self.queries {
            let rel = format!("features/{}.bin", q.utterance_id);
            write_matrix(dir.join(&rel), &q.embeddings)?;
            queries.push(ManifestRecord {
                utterance_id: q.utterance_id.clone(),
                tokenized: true,
                features: rel,
                logits: None,
                transcript: q.nbest.primary().to_vec(),
                text: render(q.nbest.primary()),
                source_tag: "query".into(),
                blank_id: None,
                tokenizer: None,
            });
            nbest.push(NBestRecord {
                utterance_id: q.utterance_id.clone(),
                hypotheses: q.nbest.hypotheses().to_vec(),
                scores: Vec::new(),
            });
            truth.push(TruthRecord {
                utterance_id: q.utterance_id.clone(),
                target_utterance: self.items[q.target_seq as usize].utterance_id().to_string(),
                target_seq: q.target_seq,
            });
        }
        write_jsonl(dir.join("queries.jsonl"), &queries)?;
        write_jsonl(dir.join("nbest.jsonl"), &nbest)?;
        write_jsonl(dir.join("truth.jsonl"), &truth)
    }
}

const TOY_VOCAB: [&str; 8] = ["<blank>", "ni", "hao", "shi", "jie", "zao", "shang", "wan"];
const TOY_DIM: usize = 6;

/// A tiny frame-level corpus for exercising the full CLI pipeline.
///
/// Two stored utterances (3 and 4 tokens), two queries with 5-best lists:
/// `q-error` disagrees on its middle token, `q-consensus` is unanimous.
/// Writes `datastore.jsonl`, `queries.jsonl`, `nbest.jsonl`, `vocab.txt`
/// and tensors under `features/`.
pub fn write_toy_ctc_corpus(dir: impl AsRef<Path>, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    let feats = dir.join("features");
    fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = TOY_VOCAB.len();
    let prototypes: Vec<Vec<f32>> = (0..vocab).map(|_| unit_vector(&mut rng, TOY_DIM)).collect();

    // (id, spoken tokens, transcript used for alignment, source)
    let stored: [(&str, &[u32]); 2] = [("toy-a", &[1, 2, 3]), ("toy-b", &[4, 5, 6, 2])];
    let queries: [(&str, &[u32]); 2] = [("q-error", &[1, 2, 3]), ("q-consensus", &[4, 5, 6, 2])];

    let utterance = |id: &str, spoken: &[u32], rng: &mut ChaCha8Rng| -> Result<(String, String)> {
        // each token spans 2 frames followed by one blank frame
        let mut labels = vec![0u32];
        for &t in spoken {
            labels.extend([t, t, 0]);
        }
        let frames = labels.len();
        let mut grid = Matrix::zeros(frames, vocab);
        let mut hidden = Matrix::zeros(frames, TOY_DIM);
        let off = (0.14f64 / (vocab - 1) as f64).ln() as f32;
        for (t, &l) in labels.iter().enumerate() {
            let row = grid.row_mut(t);
            row.iter_mut().for_each(|v| *v = off);
            row[l as usize] = (0.86f64).ln() as f32;
            let h = perturb(rng, &prototypes[l as usize], 0.1);
            hidden.row_mut(t).copy_from_slice(&h);
        }
        let logits = format!("features/{id}.logits.bin");
        let features = format!("features/{id}.hidden.bin");
        write_matrix(dir.join(&logits), &grid)?;
        write_matrix(dir.join(&features), &hidden)?;
        Ok((logits, features))
    };

    let text = |tokens: &[u32]| {
        tokens
            .iter()
            .map(|&t| TOY_VOCAB[t as usize])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut store = Vec::new();
    for (id, tokens) in stored {
        let (logits, features) = utterance(id, tokens, &mut rng)?;
        store.push(ManifestRecord {
            utterance_id: id.into(),
            tokenized: false,
            features,
            logits: Some(logits),
            transcript: tokens.to_vec(),
            text: text(tokens),
            source_tag: "toy".into(),
            blank_id: Some(0),
            tokenizer: None,
        });
    }
    write_jsonl(dir.join("datastore.jsonl"), &store)?;

    let nbest = vec![
        NBestRecord {
            utterance_id: "q-error".into(),
            hypotheses: vec![
                vec![1, 7, 3],
                vec![1, 2, 3],
                vec![1, 7, 3],
                vec![1, 2, 3],
                vec![1, 5, 3],
            ],
            scores: vec![-1.0, -1.2, -1.3, -1.5, -2.0],
        },
        NBestRecord {
            utterance_id: "q-consensus".into(),
            hypotheses: vec![vec![4, 5, 6, 2]; 5],
            scores: vec![-0.5, -0.9, -1.1, -1.4, -1.8],
        },
    ];
    let mut query_records = Vec::new();
    for ((id, spoken), nb) in queries.iter().zip(&nbest) {
        let (logits, features) = utterance(id, spoken, &mut rng)?;
        query_records.push(ManifestRecord {
            utterance_id: (*id).into(),
            tokenized: false,
            features,
            logits: Some(logits),
            transcript: nb.hypotheses[0].clone(),
            text: text(&nb.hypotheses[0]),
            source_tag: "toy-query".into(),
            blank_id: Some(0),
            tokenizer: None,
        });
    }
    write_jsonl(dir.join("queries.jsonl"), &query_records)?;
    write_jsonl(dir.join("nbest.jsonl"), &nbest)?;

    let vocab_txt: String = TOY_VOCAB
        .iter()
        .enumerate()
        .map(|(i, w)| format!("{i}\t{w}\n"))
        .collect();
    let vocab_path = dir.join("vocab.txt");
    fs::write(&vocab_path, vocab_txt).map_err(|e| Error::io(&vocab_path, e))
}
