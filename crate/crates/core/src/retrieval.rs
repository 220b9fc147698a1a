//! Example retrieval for one query utterance.
//!
//! Token-level retrieval runs in four steps:
//!
//! 1. align every N-best hypothesis to hypothesis 0 and drop query positions
//!    on which all hypotheses agree (likely correct tokens);
//! 2. search the `k` nearest datastore keys for each remaining query token;
//! 3. group the hits by owning sequence and sum their cosine similarities;
//! 4. divide by the number of queried tokens, drop groups below the
//!    threshold and keep the best `M`.
//!
//! The baseline retrievers (random, mean-embedding, token-id edit distance)
//! share the [`ExampleCandidate`] output so they can be benchmarked side by
//! side.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::Datastore;
use crate::edit::{self, EditOp};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::vector_index::{cosine, NeighborSearch, DEFAULT_K};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_EXAMPLES: usize = 4;
pub const DEFAULT_NBEST: usize = 5;

/// ASR hypotheses, best first. Hypothesis 0 is the one the query speech
/// tokens are aligned to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    hypotheses: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
}

impl NBestList {
    pub fn new(hypotheses: Vec<Vec<u32>>) -> Result<Self> {
        Self::with_scores(hypotheses, None)
    }

    pub fn with_scores(hypotheses: Vec<Vec<u32>>, scores: Option<Vec<f64>>) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::InvalidInput("N-best list has no hypotheses".into()));
        }
        if let Some(s) = &scores {
            if s.len() != hypotheses.len() {
                return Err(Error::LengthMismatch {
                    expected: hypotheses.len(),
                    actual: s.len(),
                });
            }
        }
        Ok(Self { hypotheses, scores })
    }

    pub fn hypotheses(&self) -> &[Vec<u32>] {
        &self.hypotheses
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn primary(&self) -> &[u32] {
        &self.hypotheses[0]
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// First `n` hypotheses (at least one is always kept).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.max(1).min(self.len());
        Self {
            hypotheses: self.hypotheses[..n].to_vec(),
            scores: self.scores.as_ref().map(|s| s[..n].to_vec()),
        }
    }
}

/// One line of an N-best JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    pub utterance_id: String,
    pub hypotheses: Vec<Vec<u32>>,
    #[serde(default)]
    pub scores: Vec<f64>,
}

impl NBestRecord {
    pub fn to_list(&self) -> Result<NBestList> {
        let scores = (!self.scores.is_empty()).then(|| self.scores.clone());
        NBestList::with_scores(self.hypotheses.clone(), scores)
    }
}

/// What one hypothesis holds at one anchor column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedCell {
    /// `None` is a gap (the hypothesis deleted the anchor token).
    pub token: Option<u32>,
    /// Tokens the hypothesis inserted just before this column.
    pub inserted_before: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedColumn {
    /// One cell per hypothesis; cell 0 is the anchor token itself.
    pub cells: Vec<AlignedCell>,
}

impl AlignedColumn {
    pub fn anchor(&self) -> u32 {
        self.cells[0].token.expect("hypothesis 0 has no gaps")
    }

    pub fn has_gap(&self) -> bool {
        self.cells.iter().any(|c| c.token.is_none())
    }

    /// No gap and every hypothesis carries the anchor token.
    pub fn is_unanimous(&self) -> bool {
        let anchor = self.anchor();
        self.cells.iter().all(|c| c.token == Some(anchor))
    }
}

/// N-best hypotheses laid out on the positions of hypothesis 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedNBest {
    pub columns: Vec<AlignedColumn>,
    /// Per hypothesis, tokens inserted after the last anchor.
    pub trailing: Vec<Vec<u32>>,
}

impl AlignedNBest {
    pub fn n_hypotheses(&self) -> usize {
        self.trailing.len()
    }

    /// Reads hypothesis `h` back out of the columns.
    pub fn hypothesis(&self, h: usize) -> Vec<u32> {
        let mut out = Vec::new();
        for col in &self.columns {
            let cell = &col.cells[h];
            out.extend_from_slice(&cell.inserted_before);
            out.extend(cell.token);
        }
        out.extend_from_slice(&self.trailing[h]);
        out
    }
}

/// Aligns each hypothesis to hypothesis 0 by unit-cost Levenshtein
/// alignment over token ids.
pub fn align_nbest(nbest: &NBestList) -> AlignedNBest {
    let anchor = nbest.primary();
    let n = nbest.len();
    let mut columns: Vec<AlignedColumn> = anchor
        .iter()
        .map(|&t| AlignedColumn {
            cells: {
                let mut cells = Vec::with_capacity(n);
                cells.push(AlignedCell {
                    token: Some(t),
                    inserted_before: Vec::new(),
                });
                cells
            },
        })
        .collect();
    let mut trailing = vec![Vec::new()];

    for hyp in &nbest.hypotheses()[1..] {
        let mut pending = Vec::new();
        for op in edit::align(anchor, hyp) {
            match op {
                EditOp::Match(i, j) | EditOp::Substitute(i, j) => {
                    columns[i].cells.push(AlignedCell {
                        token: Some(hyp[j]),
                        inserted_before: std::mem::take(&mut pending),
                    })
                }
                EditOp::Delete(i) => columns[i].cells.push(AlignedCell {
                    token: None,
                    inserted_before: std::mem::take(&mut pending),
                }),
                EditOp::Insert(j) => pending.push(hyp[j]),
            }
        }
        trailing.push(pending);
    }
    AlignedNBest { columns, trailing }
}

/// Query token embeddings that survive consensus pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedQuery {
    pub kept_positions: Vec<usize>,
    pub embeddings: Matrix,
    pub query_len: usize,
}

impl PrunedQuery {
    /// Every position kept.
    pub fn unpruned(embeddings: &Matrix) -> Self {
        Self {
            kept_positions: (0..embeddings.rows()).collect(),
            embeddings: embeddings.clone(),
            query_len: embeddings.rows(),
        }
    }

    pub fn len(&self) -> usize {
        self.kept_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_positions.is_empty()
    }
}

/// Drops query positions whose aligned column is unanimous across at
/// least two hypotheses.
pub fn prune_query(query_embeddings: &Matrix, aligned: &AlignedNBest) -> Result<PrunedQuery> {
    if query_embeddings.rows() != aligned.columns.len() {
        return Err(Error::LengthMismatch {
            expected: aligned.columns.len(),
            actual: query_embeddings.rows(),
        });
    }
    let kept_positions: Vec<usize> = if aligned.n_hypotheses() < 2 {
        (0..aligned.columns.len()).collect()
    } else {
        aligned
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_unanimous())
            .map(|(i, _)| i)
            .collect()
    };
    Ok(PrunedQuery {
        embeddings: query_embeddings.select_rows(&kept_positions),
        kept_positions,
        query_len: query_embeddings.rows(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleCandidate {
    pub seq_id: u32,
    /// Ranking score; for token-level retrieval the group sum divided by
    /// the number of queried tokens.
    pub score: f64,
    /// Unnormalized group sum (token-level retrieval only, else equal to
    /// `score`).
    pub raw_score: f64,
    /// Contributing (query token, neighbour) pairs.
    pub hit_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieveParams {
    pub k: usize,
    pub threshold: f64,
    pub max_examples: usize,
    /// Drop candidates whose utterance id equals this (leave-one-out).
    pub exclude_utterance: Option<String>,
}

impl Default for RetrieveParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            max_examples: DEFAULT_MAX_EXAMPLES,
            exclude_utterance: None,
        }
    }
}

impl RetrieveParams {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParams("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidParams(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.max_examples == 0 {
            return Err(Error::InvalidParams(
                "max_examples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn by_score(a: &ExampleCandidate, b: &ExampleCandidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.seq_id.cmp(&b.seq_id))
}

/// Every sequence hit by at least one kept query token with its grouped
/// score, ordered by score. No threshold, no cut-off.
pub fn group_scores<I: NeighborSearch + ?Sized>(
    ds: &Datastore,
    index: &I,
    pruned: &PrunedQuery,
    k: usize,
) -> Result<Vec<ExampleCandidate>> {
    if ds.is_empty() || index.is_empty() {
        return Err(Error::EmptyDatastore);
    }
    if index.dim() != ds.dim() || pruned.embeddings.cols() != ds.dim() {
        return Err(Error::DimensionMismatch(format!(
            "query dim {}, index dim {}, datastore dim {}",
            pruned.embeddings.cols(),
            index.dim(),
            ds.dim()
        )));
    }
    if pruned.is_empty() {
        return Ok(Vec::new());
    }

    let rows: Vec<&[f32]> = pruned.embeddings.iter_rows().collect();
    let hits = rows
        .par_iter()
        .map(|q| index.search(q, k))
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for neighbors in &hits {
        for n in neighbors {
            let g = groups.entry(n.seq_id).or_insert((0.0, 0));
            g.0 += n.similarity;
            g.1 += 1;
        }
    }
    let denom = pruned.len() as f64;
    let mut out: Vec<ExampleCandidate> = groups
        .into_iter()
        .map(|(seq_id, (raw, hits))| ExampleCandidate {
            seq_id,
            score: raw / denom,
            raw_score: raw,
            hit_count: hits,
        })
        .collect();
    out.sort_by(by_score);
    Ok(out)
}

/// Token-level retrieval: grouped kNN scores, thresholded, best `M` first.
pub fn retrieve<I: NeighborSearch + ?Sized>(
    ds: &Datastore,
    index: &I,
    pruned: &PrunedQuery,
    params: &RetrieveParams,
) -> Result<Vec<ExampleCandidate>> {
    params.validate()?;
    let mut out = group_scores(ds, index, pruned, params.k)?;
    out.retain(|c| {
        c.score >= params.threshold
            && params
                .exclude_utterance
                .as_deref()
                .is_none_or(|u| ds.sequence(c.seq_id).map(|s| s.utterance_id.as_str()) != Some(u))
    });
    out.truncate(params.max_examples);
    Ok(out)
}

/// Uniform sample of `count` sequences without replacement.
pub fn retrieve_random(ds: &Datastore, count: usize, seed: u64) -> Result<Vec<ExampleCandidate>> {
    let n = ds.sequences().len();
    if count > n {
        return Err(Error::InsufficientSequences {
            requested: count,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, count)
        .into_iter()
        .map(|i| ExampleCandidate {
            seq_id: i as u32,
            score: 0.0,
            raw_score: 0.0,
            hit_count: 0,
        })
        .collect())
}

fn mean_row(m: &Matrix) -> Vec<f32> {
    let mut acc = vec![0.0f64; m.cols()];
    for row in m.iter_rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let n = m.rows().max(1) as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Mean token embedding of every stored sequence.
#[derive(Debug, Clone)]
pub struct SequenceMeans {
    means: Vec<Vec<f32>>,
    dim: usize,
}

impl SequenceMeans {
    pub fn new(ds: &Datastore) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDatastore);
        }
        Ok(Self {
            means: ds
                .sequences()
                .iter()
                .map(|s| mean_row(&s.embeddings))
                .collect(),
            dim: ds.dim(),
        })
    }

    pub fn rank(&self, query_embeddings: &Matrix, count: usize) -> Result<Vec<ExampleCandidate>> {
        if query_embeddings.cols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "query dim {}, datastore dim {}",
                query_embeddings.cols(),
                self.dim
            )));
        }
        let q = mean_row(query_embeddings);
        let mut out: Vec<ExampleCandidate> = self
            .means
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let s = cosine(&q, m);
                ExampleCandidate {
                    seq_id: i as u32,
                    score: s,
                    raw_score: s,
                    hit_count: query_embeddings.rows(),
                }
            })
            .collect();
        out.sort_by(by_score);
        out.truncate(count);
        Ok(out)
    }
}

/// Sequence-embedding baseline: cosine between mean query and mean stored
/// embeddings.
pub fn retrieve_seq_embedding(
    ds: &Datastore,
    query_embeddings: &Matrix,
    count: usize,
) -> Result<Vec<ExampleCandidate>> {
    SequenceMeans::new(ds)?.rank(query_embeddings, count)
}

/// Text baseline: token-id edit distance to hypothesis 0, ascending.
/// Score is `1 - dist / max(|a|, |b|)`.
pub fn retrieve_text(
    ds: &Datastore,
    hypothesis0: &[u32],
    count: usize,
) -> Result<Vec<ExampleCandidate>> {
    if ds.is_empty() {
        return Err(Error::EmptyDatastore);
    }
    let mut scored: Vec<(usize, ExampleCandidate)> = ds
        .sequences()
        .iter()
        .map(|s| {
            let dist = edit::distance(hypothesis0, &s.tokens);
            let longest = hypothesis0.len().max(s.tokens.len()).max(1);
            let score = 1.0 - dist as f64 / longest as f64;
            (
                dist,
                ExampleCandidate {
                    seq_id: s.seq_id,
                    score,
                    raw_score: score,
                    hit_count: 0,
                },
            )
        })
        .collect();
    scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.seq_id.cmp(&b.1.seq_id)));
    Ok(scored.into_iter().take(count).map(|(_, c)| c).collect())
}
