//! Retrieval-strategy benchmark over a corpus with known targets.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{synth_corpus, SynthCorpusParams, SynthQuery};
use crate::alignment::Pooling;
use crate::datastore::{build, Datastore};
use crate::error::{Error, Result};
use crate::retrieval::{
    align_nbest, prune_query, retrieve, retrieve_random, retrieve_text, ExampleCandidate,
    PrunedQuery, RetrieveParams, SequenceMeans, DEFAULT_MAX_EXAMPLES, DEFAULT_THRESHOLD,
};
use crate::vector_index::{ExactIndex, NeighborSearch, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TokenLevel,
    TokenLevelNoPrune,
    Random,
    SeqEmbedding,
    Text,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::TokenLevel,
        Strategy::TokenLevelNoPrune,
        Strategy::Random,
        Strategy::SeqEmbedding,
        Strategy::Text,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TokenLevel => "token_level",
            Strategy::TokenLevelNoPrune => "token_level_no_prune",
            Strategy::Random => "random",
            Strategy::SeqEmbedding => "seq_embedding",
            Strategy::Text => "text",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub k: usize,
    pub threshold: f64,
    pub max_examples: usize,
    /// Seed for the random baseline; query `i` uses `seed + i`.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            max_examples: DEFAULT_MAX_EXAMPLES,
            seed: 0,
        }
    }
}

/// One benchmark query with its ground truth.
pub type BenchQuery = SynthQuery;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub queries: usize,
    pub recall_at_1: f64,
    pub recall_at_m: f64,
    /// 1-based rank of the target; misses count as `M + 1`.
    pub mean_rank: f64,
    /// Mean number of query tokens sent to the index.
    pub mean_queried_positions: f64,
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, strategy: Strategy) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "strategy\tqueries\trecall@1\trecall@M\tmean_rank\tmean_queried_positions\twall_clock_ms\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.2}\t{:.1}\n",
                r.strategy,
                r.queries,
                r.recall_at_1,
                r.recall_at_m,
                r.mean_rank,
                r.mean_queried_positions,
                r.wall_clock_ms
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Outcome {
    hit1: usize,
    hit_m: usize,
    rank: usize,
    queried: usize,
}

fn run_one<I: NeighborSearch + ?Sized>(
    ds: &Datastore,
    index: &I,
    means: &SequenceMeans,
    q: &BenchQuery,
    i: usize,
    strategy: Strategy,
    cfg: &BenchConfig,
) -> Result<(Vec<ExampleCandidate>, usize)> {
    let m = cfg.max_examples;
    let params = RetrieveParams {
        k: cfg.k,
        threshold: cfg.threshold,
        max_examples: m,
        exclude_utterance: None,
    };
    Ok(match strategy {
        Strategy::TokenLevel => {
            let pruned = prune_query(&q.embeddings, &align_nbest(&q.nbest))?;
            let n = pruned.len();
            (retrieve(ds, index, &pruned, &params)?, n)
        }
        Strategy::TokenLevelNoPrune => {
            let pruned = PrunedQuery::unpruned(&q.embeddings);
            let n = pruned.len();
            (retrieve(ds, index, &pruned, &params)?, n)
        }
        Strategy::Random => (
            retrieve_random(
                ds,
                m.min(ds.sequences().len()),
                cfg.seed.wrapping_add(i as u64),
            )?,
            0,
        ),
        Strategy::SeqEmbedding => (means.rank(&q.embeddings, m)?, 0),
        Strategy::Text => (retrieve_text(ds, q.nbest.primary(), m)?, 0),
    })
}

/// Runs every strategy over every query. Per-query work is parallel; the
/// aggregates are plain sums, so results do not depend on scheduling.
pub fn benchmark_retrieval<I: NeighborSearch + ?Sized>(
    ds: &Datastore,
    index: &I,
    queries: &[BenchQuery],
    strategies: &[Strategy],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if queries.is_empty() {
        return Err(Error::InvalidInput(
            "benchmark needs at least one query".into(),
        ));
    }
    if cfg.max_examples == 0 {
        return Err(Error::InvalidParams(
            "max_examples must be at least 1".into(),
        ));
    }
    let means = SequenceMeans::new(ds)?;
    let m = cfg.max_examples;
    let mut rows = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let start = Instant::now();
        let outcomes = queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                let (cands, queried) = run_one(ds, index, &means, q, i, strategy, cfg)?;
                let pos = cands.iter().take(m).position(|c| c.seq_id == q.target_seq);
                Ok(Outcome {
                    hit1: usize::from(pos == Some(0)),
                    hit_m: usize::from(pos.is_some()),
                    rank: pos.map_or(m + 1, |p| p + 1),
                    queried,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let wall = start.elapsed().as_secs_f64() * 1e3;
        let n = outcomes.len() as f64;
        let sum = |f: fn(&Outcome) -> usize| outcomes.iter().map(f).sum::<usize>() as f64;
        rows.push(BenchRow {
            strategy,
            queries: outcomes.len(),
            recall_at_1: sum(|o| o.hit1) / n,
            recall_at_m: sum(|o| o.hit_m) / n,
            mean_rank: sum(|o| o.rank) / n,
            mean_queried_positions: sum(|o| o.queried) / n,
            wall_clock_ms: wall,
        });
    }
    Ok(BenchReport {
        config: cfg.clone(),
        rows,
    })
}

/// Generates a synthetic corpus, builds an exact index and benchmarks it.
pub fn run_synthetic_benchmark(
    params: &SynthCorpusParams,
    strategies: &[Strategy],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    let corpus = synth_corpus(params)?;
    let (ds, _) = build(corpus.items, Pooling::Mean)?;
    let index = ExactIndex::build(&ds)?;
    benchmark_retrieval(&ds, &index, &corpus.queries, strategies, cfg)
}
