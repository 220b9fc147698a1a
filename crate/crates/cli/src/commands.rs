use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use larag::alignment::{align_and_pool, Pooling, Transcript};
use larag::datastore::{Datastore, DatastoreBuilder, SkippedItem, TokenizerKind};
use larag::evaluation::{
    cer, run_synthetic_benchmark, synth_corpus, write_toy_ctc_corpus, BenchConfig, CerOptions,
    CerReport, Strategy, SynthCorpusParams,
};
use larag::manifest::{
    base_dir, read_jsonl, read_manifest, resolve, write_jsonl, LoadedFeatures, ManifestRecord,
};
use larag::prompt::{assemble_prompt, serialize_prompt, AdapterWeights};
use larag::retrieval::{
    align_nbest, prune_query, retrieve, retrieve_random, retrieve_seq_embedding, retrieve_text,
    ExampleCandidate, NBestList, NBestRecord, PrunedQuery, RetrieveParams,
};
use larag::tensor::{read_matrix, write_matrix, Matrix};
use larag::vector_index::{Index, IvfIndex, IvfParams, IVF_FILE};
use larag::Error;
use serde::{Deserialize, Serialize};

use crate::{
    AlignArgs, BenchArgs, BuildArgs, CorpusArgs, EvalArgs, IndexKind, PromptArgs, QueryArgs,
    StatsArgs, SynthArgs, ToyArgs,
};

const RESULTS_FILE: &str = "results.jsonl";
const QUERY_META_FILE: &str = "query.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AlignmentRecord {
    utterance_id: String,
    tokens: Vec<u32>,
    /// `[token, start, end)` per token.
    spans: Vec<(u32, usize, usize)>,
    path_logprob: f64,
}

pub fn align(args: AlignArgs) -> Result<()> {
    let records = read_manifest(&args.manifest)?;
    let base = base_dir(&args.manifest);
    create_dir(&args.out.join("embeddings"))?;
    let mut manifest = Vec::new();
    let mut alignments = Vec::new();
    let mut skipped = Vec::new();
    for rec in &records {
        let rel = format!("embeddings/{}.bin", rec.utterance_id);
        let embeddings = match rec.load_features(&base)? {
            LoadedFeatures::Tokens(m) => m,
            LoadedFeatures::Frames { grid, hidden } => {
                let transcript = Transcript::with_text(rec.transcript.clone(), rec.text.clone());
                match align_and_pool(&grid, &hidden, &transcript, args.pooling) {
                    Ok((al, emb)) => {
                        alignments.push(AlignmentRecord {
                            utterance_id: rec.utterance_id.clone(),
                            tokens: al.tokens(),
                            spans: al.spans.iter().map(|s| (s.token, s.start, s.end)).collect(),
                            path_logprob: al.path_logprob,
                        });
                        emb
                    }
                    Err(e @ Error::InfeasibleAlignment(_)) => {
                        skipped.push(SkippedItem {
                            utterance_id: rec.utterance_id.clone(),
                            reason: e.to_string(),
                        });
                        continue;
                    }
                    Err(e) => return Err(e).with_context(|| rec.utterance_id.clone()),
                }
            }
        };
        write_matrix(args.out.join(&rel), &embeddings)?;
        manifest.push(ManifestRecord {
            tokenized: true,
            features: rel,
            logits: None,
            blank_id: None,
            tokenizer: Some(rec.tokenizer.unwrap_or(if rec.tokenized {
                TokenizerKind::AedPretokenized
            } else {
                TokenizerKind::Ctc
            })),
            ..rec.clone()
        });
    }
    write_jsonl(args.out.join("manifest.jsonl"), &manifest)?;
    write_jsonl(args.out.join("alignments.jsonl"), &alignments)?;
    write_jsonl(args.out.join("skipped.jsonl"), &skipped)?;
    print_json(&serde_json::json!({
        "aligned": manifest.len(),
        "skipped": skipped.len(),
    }))
}

pub fn build(args: BuildArgs) -> Result<()> {
    let records = read_manifest(&args.manifest)?;
    let base = base_dir(&args.manifest);
    let mut builder = DatastoreBuilder::new(args.pooling);
    let declared: BTreeSet<_> = records
        .iter()
        .filter(|r| r.tokenized)
        .map(|r| r.tokenizer)
        .collect();
    if let [Some(kind)] = declared.into_iter().collect::<Vec<_>>()[..] {
        builder = builder.with_tokenizer_kind(kind);
    }
    for rec in &records {
        builder
            .push(rec.load_item(&base)?)
            .with_context(|| format!("ingesting {}", rec.utterance_id))?;
    }
    let (ds, report) = builder.finish()?;
    ds.save(&args.datastore)?;
    if args.index == IndexKind::Ivf {
        let mut params = IvfParams::for_entry_count(ds.len(), args.seed);
        if let Some(c) = args.n_clusters {
            params.n_clusters = c;
            params.n_probe = c.div_ceil(8);
        }
        if let Some(p) = args.n_probe {
            params.n_probe = p;
        }
        params.kmeans_iters = args.kmeans_iters;
        IvfIndex::build(&ds, params)?.save(&args.datastore)?;
    }
    print_json(&serde_json::json!({
        "entry_count": ds.len(),
        "sequence_count": ds.sequences().len(),
        "index": match args.index { IndexKind::Exact => "exact", IndexKind::Ivf => "ivf" },
        "skipped": report.skipped,
    }))
}

/// The IVF index when the datastore carries one, else exact search.
fn open_index(dir: &Path, ds: &Datastore) -> Result<Index> {
    Ok(if dir.join(IVF_FILE).exists() {
        Index::Ivf(IvfIndex::load(dir, ds)?)
    } else {
        Index::build_exact(ds)?
    })
}

fn load_vocab(path: &Path) -> Result<HashMap<u32, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut vocab = HashMap::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let Some((id, tok)) = line.split_once('\t') else {
            bail!(Error::InvalidInput(format!(
                "{}:{}: expected id<TAB>token",
                path.display(),
                n + 1
            )));
        };
        let id = id.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("{}:{}: bad id {id:?}", path.display(), n + 1))
        })?;
        vocab.insert(id, tok.to_string());
    }
    Ok(vocab)
}

fn render(vocab: &HashMap<u32, String>, tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(|t| vocab.get(t).cloned().unwrap_or_else(|| format!("<{t}>")))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryMeta {
    datastore: PathBuf,
    strategy: Strategy,
    k: usize,
    threshold: f64,
    max_examples: usize,
    nbest_size: usize,
    pruned: bool,
    exclude_self: bool,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExampleOut {
    seq_id: u32,
    utterance_id: String,
    score: f64,
    raw_score: f64,
    hit_count: usize,
    tokens: Vec<u32>,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryResult {
    utterance_id: String,
    query_len: usize,
    kept_positions: Vec<usize>,
    queried_positions: usize,
    /// Speech tokens of the query, relative to the query output directory.
    embeddings: String,
    nbest: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    nbest_text: Vec<String>,
    examples: Vec<ExampleOut>,
}

fn query_embeddings(
    rec: &ManifestRecord,
    base: &Path,
    nbest: &NBestList,
    pooling: Pooling,
) -> Result<Matrix> {
    Ok(match rec.load_features(base)? {
        LoadedFeatures::Tokens(m) => m,
        LoadedFeatures::Frames { grid, hidden } => {
            let transcript = Transcript::new(nbest.primary().to_vec());
            align_and_pool(&grid, &hidden, &transcript, pooling)
                .with_context(|| format!("aligning {} to its first hypothesis", rec.utterance_id))?
                .1
        }
    })
}

pub fn query(args: QueryArgs) -> Result<()> {
    let ds = Datastore::load(&args.datastore)?;
    let index = open_index(&args.datastore, &ds)?;
    let records = read_manifest(&args.queries)?;
    let base = base_dir(&args.queries);
    let nbests: HashMap<String, NBestRecord> = read_jsonl::<NBestRecord>(&args.nbest)?
        .into_iter()
        .map(|r| (r.utterance_id.clone(), r))
        .collect();
    let vocab = args.vocab.as_deref().map(load_vocab).transpose()?;
    if args.nbest_size == 0 {
        bail!(Error::InvalidParams(
            "--nbest-size must be at least 1".into()
        ));
    }
    let strategy = match (args.strategy, args.no_prune) {
        (Strategy::TokenLevel, true) => Strategy::TokenLevelNoPrune,
        (s, _) => s,
    };
    let params = RetrieveParams {
        k: args.k,
        threshold: args.threshold,
        max_examples: args.examples,
        exclude_utterance: None,
    };

    create_dir(&args.out.join("embeddings"))?;
    let mut results = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let nb = nbests
            .get(&rec.utterance_id)
            .ok_or_else(|| Error::InvalidInput(format!("no N-best list for {}", rec.utterance_id)))?
            .to_list()?
            .truncated(args.nbest_size);
        let emb = query_embeddings(rec, &base, &nb, args.pooling)?;
        let pruned = match strategy {
            Strategy::TokenLevel => prune_query(&emb, &align_nbest(&nb))?,
            _ => PrunedQuery::unpruned(&emb),
        };
        let own = args.exclude_self.then(|| rec.utterance_id.clone());
        let is_own = |c: &ExampleCandidate| {
            own.as_deref()
                .is_some_and(|u| ds.sequence(c.seq_id).is_some_and(|s| s.utterance_id == u))
        };
        // baselines over-fetch by one so a dropped self-match leaves M
        let want = args.examples + usize::from(own.is_some());
        let mut cands = match strategy {
            Strategy::TokenLevel | Strategy::TokenLevelNoPrune => retrieve(
                &ds,
                &index,
                &pruned,
                &RetrieveParams {
                    exclude_utterance: own.clone(),
                    ..params.clone()
                },
            )?,
            Strategy::Random => retrieve_random(
                &ds,
                want.min(ds.sequences().len()),
                args.seed.wrapping_add(i as u64),
            )?,
            Strategy::SeqEmbedding => retrieve_seq_embedding(&ds, &emb, want)?,
            Strategy::Text => retrieve_text(&ds, nb.primary(), want)?,
        };
        cands.retain(|c| !is_own(c));
        cands.truncate(args.examples);

        let rel = format!("embeddings/{}.bin", rec.utterance_id);
        write_matrix(args.out.join(&rel), &emb)?;
        let examples = cands
            .iter()
            .map(|c| {
                let s = ds
                    .sequence(c.seq_id)
                    .expect("candidate from this datastore");
                ExampleOut {
                    seq_id: c.seq_id,
                    utterance_id: s.utterance_id.clone(),
                    score: c.score,
                    raw_score: c.raw_score,
                    hit_count: c.hit_count,
                    tokens: s.tokens.clone(),
                    text: s.text.clone(),
                }
            })
            .collect();
        results.push(QueryResult {
            utterance_id: rec.utterance_id.clone(),
            query_len: emb.rows(),
            queried_positions: pruned.len(),
            kept_positions: pruned.kept_positions,
            embeddings: rel,
            nbest_text: vocab
                .as_ref()
                .map(|v| nb.hypotheses().iter().map(|h| render(v, h)).collect())
                .unwrap_or_default(),
            nbest: nb.hypotheses().to_vec(),
            examples,
        });
    }
    write_jsonl(args.out.join(RESULTS_FILE), &results)?;
    let meta = QueryMeta {
        datastore: args.datastore.clone(),
        strategy,
        k: args.k,
        threshold: args.threshold,
        max_examples: args.examples,
        nbest_size: args.nbest_size,
        pruned: strategy == Strategy::TokenLevel,
        exclude_self: args.exclude_self,
        seed: args.seed,
    };
    let meta_path = args.out.join(QUERY_META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
        .with_context(|| format!("writing {}", meta_path.display()))?;

    for r in &results {
        println!(
            "{}\tqueried {}/{}\texamples {}",
            r.utterance_id,
            r.queried_positions,
            r.query_len,
            r.examples.len()
        );
    }
    Ok(())
}

pub fn prompt(args: PromptArgs) -> Result<()> {
    let meta_path = args.query.join(QUERY_META_FILE);
    let meta: QueryMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path)
            .with_context(|| format!("reading {}", meta_path.display()))?,
    )
    .map_err(|e| Error::CorruptFile {
        path: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let ds = Datastore::load(args.datastore.as_ref().unwrap_or(&meta.datastore))?;
    let results: Vec<QueryResult> = read_jsonl(args.query.join(RESULTS_FILE))?;
    if args.nbest == 0 {
        bail!(Error::InvalidParams("--nbest must be at least 1".into()));
    }
    let adapter = match &args.adapter {
        Some(p) => AdapterWeights::load(p)?,
        None => AdapterWeights::random(
            ds.dim(),
            args.hidden,
            args.output_dim,
            args.activation,
            args.seed,
        ),
    };
    if let Some(p) = &args.save_adapter {
        adapter.save(p)?;
    }

    create_dir(&args.out)?;
    let mut summary = Vec::with_capacity(results.len());
    for r in &results {
        let input = read_matrix(resolve(&args.query, &r.embeddings))?;
        let nbest = NBestList::new(r.nbest.clone())?.truncated(args.nbest);
        let examples = r
            .examples
            .iter()
            .map(|e| {
                ds.sequence(e.seq_id)
                    .filter(|s| s.utterance_id == e.utterance_id)
                    .ok_or_else(|| {
                        Error::InvalidInput(format!("example {} not in datastore", e.utterance_id))
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let layout = assemble_prompt(&examples, &adapter, &input, &nbest)?;
        let file = format!("{}.prompt.json", r.utterance_id);
        serialize_prompt(&layout, args.out.join(&file))?;
        summary.push(serde_json::json!({
            "utterance_id": r.utterance_id,
            "prompt": file,
            "examples": layout.example_count(),
            "hypotheses": layout.hypothesis_count(),
            "segments": layout.segments().len(),
        }));
    }
    write_jsonl(args.out.join("prompts.jsonl"), &summary)?;
    for s in &summary {
        println!("{s}");
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let hyp = read_lines(&args.hyp)?;
    let reference = read_lines(&args.reference)?;
    if hyp.len() != reference.len() {
        bail!(Error::LengthMismatch {
            expected: reference.len(),
            actual: hyp.len(),
        });
    }
    let opts = CerOptions {
        strip_whitespace: args.strip_whitespace,
    };
    let reports = hyp
        .iter()
        .zip(&reference)
        .enumerate()
        .map(|(n, (h, r))| cer(h, r, opts).with_context(|| format!("line {}", n + 1)))
        .collect::<Result<Vec<_>>>()?;
    let total = CerReport::total(&reports)?;
    println!("cer {:?}", total.cer);
    println!(
        "substitutions {} insertions {} deletions {} reference_chars {} utterances {}",
        total.substitutions,
        total.insertions,
        total.deletions,
        total.ref_length,
        reports.len()
    );
    Ok(())
}

fn corpus_params(c: &CorpusArgs) -> SynthCorpusParams {
    SynthCorpusParams {
        n_base_sequences: c.bases,
        tokens_per_sequence: c.tokens,
        dim: c.dim,
        n_variants_per_base: c.variants,
        noise_sigma: c.sigma,
        vocab_size: c.vocab_size,
        seed: c.seed,
        distractors_per_base: c.distractors,
        distractor_shared_tokens: c.shared,
        distractor_sigma: c.distractor_sigma,
        nbest_size: c.corpus_nbest,
        error_positions: c.error_positions,
    }
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let strategies = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategies.clone()
    };
    let cfg = BenchConfig {
        k: args.k,
        threshold: args.threshold,
        max_examples: args.examples,
        seed: args.corpus.seed,
    };
    let report = run_synthetic_benchmark(&corpus_params(&args.corpus), &strategies, &cfg)?;
    let tsv = report.to_tsv();
    print!("{tsv}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        fs::write(out.join("bench.tsv"), &tsv)?;
        fs::write(out.join("bench.json"), report.to_json() + "\n")?;
    }
    Ok(())
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let ds = Datastore::load(&args.datastore)?;
    let stats = ds.stats();
    let mut value = serde_json::to_value(&stats)?;
    let index = if args.datastore.join(IVF_FILE).exists() {
        let ivf = IvfIndex::load(&args.datastore, &ds)?;
        let sizes: BTreeMap<usize, usize> =
            ivf.assignments().iter().fold(BTreeMap::new(), |mut m, &a| {
                *m.entry(a as usize).or_default() += 1;
                m
            });
        serde_json::json!({
            "kind": "ivf",
            "n_clusters": ivf.params().n_clusters,
            "n_probe": ivf.params().n_probe,
            "largest_cell": sizes.values().max().copied().unwrap_or(0),
        })
    } else {
        serde_json::json!({ "kind": "exact" })
    };
    value["index"] = index;
    print_json(&value)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let corpus = synth_corpus(&corpus_params(&args.corpus))?;
    corpus.write(&args.out)?;
    print_json(&serde_json::json!({
        "sequences": corpus.items.len(),
        "queries": corpus.queries.len(),
    }))
}

pub fn toy(args: ToyArgs) -> Result<()> {
    write_toy_ctc_corpus(&args.out, args.seed)?;
    println!("{}", args.out.display());
    Ok(())
}
