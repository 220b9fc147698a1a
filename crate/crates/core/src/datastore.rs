//! Token-level key/value datastore.
//!
//! Every stored utterance contributes one [`SequenceRecord`] holding its
//! full token-embedding sequence and token ids, and one entry per token
//! whose key is that token's embedding and whose value is the token id.
//! Entries keep a `(seq_id, position)` back-reference to their sequence, so
//! any token-level hit resolves to the whole utterance it came from.
//!
//! On-disk layout of a datastore directory:
//!
//! - `meta.json`: [`DatastoreMeta`]
//! - `sequences.bin`: raw embeddings of all sequences, concatenated, `E × d`
//! - `entries.bin`: L2-normalized keys `E × d` followed by `E × 3` u32
//!   `(seq_id, position, value)` back-references
//! - `texts.jsonl`: one [`SequenceText`] line per sequence

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{align_and_pool, LogPosteriorGrid, Pooling, Transcript};
use crate::error::{Error, Result};
use crate::tensor::{read_tensors, write_tensors, Matrix, Tensor};

pub const DATASTORE_FORMAT_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const SEQUENCES_FILE: &str = "sequences.bin";
pub const ENTRIES_FILE: &str = "entries.bin";
pub const TEXTS_FILE: &str = "texts.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    Ctc,
    AedPretokenized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatastoreMeta {
    pub dim: usize,
    pub tokenizer_kind: TokenizerKind,
    pub entry_count: usize,
    pub sequence_count: usize,
    pub metric: Metric,
    pub format_version: u32,
}

/// One stored utterance: `embeddings` is `L × d`, `tokens` has length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub seq_id: u32,
    pub utterance_id: String,
    pub embeddings: Matrix,
    pub tokens: Vec<u32>,
    pub text: String,
    pub source_tag: String,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Back-reference of one token entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntryRef {
    pub seq_id: u32,
    pub position: u32,
    pub value: u32,
}

/// Borrowed view of one key/value pair and where it came from.
#[derive(Debug, Clone, Copy)]
pub struct DatastoreEntry<'a> {
    pub key: &'a [f32],
    pub normalized_key: &'a [f32],
    pub value: u32,
    pub seq_id: u32,
    pub position: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    meta: DatastoreMeta,
    sequences: Vec<SequenceRecord>,
    entries: Vec<EntryRef>,
    normalized_keys: Matrix,
}

/// One line of `texts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceText {
    pub seq_id: u32,
    pub utterance_id: String,
    pub tokens: Vec<u32>,
    pub text: String,
    pub source_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatastoreStats {
    #[serde(flatten)]
    pub meta: DatastoreMeta,
    pub tokens_per_source: BTreeMap<String, usize>,
}

/// Writes `v / ‖v‖` into `out`; zero vectors stay zero.
pub fn l2_normalize_into(v: &[f32], out: &mut [f32]) {
    let norm = v
        .iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
    } else {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = (x as f64 / norm) as f32;
        }
    }
}

impl Datastore {
    fn assemble(sequences: Vec<SequenceRecord>, kind: TokenizerKind, dim: usize) -> Self {
        let entry_count: usize = sequences.iter().map(|s| s.len()).sum();
        let mut entries = Vec::with_capacity(entry_count);
        let mut normalized_keys = Matrix::zeros(entry_count, dim);
        for seq in &sequences {
            for (pos, &value) in seq.tokens.iter().enumerate() {
                l2_normalize_into(
                    seq.embeddings.row(pos),
                    normalized_keys.row_mut(entries.len()),
                );
                entries.push(EntryRef {
                    seq_id: seq.seq_id,
                    position: pos as u32,
                    value,
                });
            }
        }
        let meta = DatastoreMeta {
            dim,
            tokenizer_kind: kind,
            entry_count,
            sequence_count: sequences.len(),
            metric: Metric::Cosine,
            format_version: DATASTORE_FORMAT_VERSION,
        };
        Self {
            meta,
            sequences,
            entries,
            normalized_keys,
        }
    }

    pub fn meta(&self) -> &DatastoreMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    /// Number of token entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sequences(&self) -> &[SequenceRecord] {
        &self.sequences
    }

    /// seq_ids are dense, so this is a direct lookup.
    pub fn sequence(&self, seq_id: u32) -> Option<&SequenceRecord> {
        self.sequences.get(seq_id as usize)
    }

    pub fn entry_refs(&self) -> &[EntryRef] {
        &self.entries
    }

    pub fn normalized_keys(&self) -> &Matrix {
        &self.normalized_keys
    }

    pub fn entry(&self, index: usize) -> DatastoreEntry<'_> {
        let r = self.entries[index];
        let seq = &self.sequences[r.seq_id as usize];
        DatastoreEntry {
            key: seq.embeddings.row(r.position as usize),
            normalized_key: self.normalized_keys.row(index),
            value: r.value,
            seq_id: r.seq_id,
            position: r.position,
        }
    }

    pub fn stats(&self) -> DatastoreStats {
        let mut tokens_per_source = BTreeMap::new();
        for seq in &self.sequences {
            *tokens_per_source.entry(seq.source_tag.clone()).or_insert(0) += seq.len();
        }
        DatastoreStats {
            meta: self.meta.clone(),
            tokens_per_source,
        }
    }

    /// Writes the datastore into `dir`, replacing any existing directory.
    ///
    /// Files are staged in a sibling directory that is renamed into place.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let staging = sibling(dir, "staging");
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        self.write_files(&staging)?;

        if dir.exists() {
            let old = sibling(dir, "old");
            if old.exists() {
                fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
            }
            fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
            fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        } else {
            fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }

    fn write_files(&self, dir: &Path) -> Result<()> {
        let meta_path = dir.join(META_FILE);
        let meta =
            serde_json::to_string_pretty(&self.meta).map_err(|e| Error::json(&meta_path, e))?;
        fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;

        let (e, d) = (self.len(), self.dim());
        let mut raw = Vec::with_capacity(e * d);
        for seq in &self.sequences {
            raw.extend_from_slice(seq.embeddings.as_slice());
        }
        write_tensors(dir.join(SEQUENCES_FILE), &[Tensor::f32(vec![e, d], raw)])?;

        let refs = self
            .entries
            .iter()
            .flat_map(|r| [r.seq_id, r.position, r.value])
            .collect();
        write_tensors(
            dir.join(ENTRIES_FILE),
            &[
                self.normalized_keys.to_tensor(),
                Tensor::u32(vec![e, 3], refs),
            ],
        )?;

        let texts_path = dir.join(TEXTS_FILE);
        let mut out = Vec::new();
        for seq in &self.sequences {
            let line = SequenceText {
                seq_id: seq.seq_id,
                utterance_id: seq.utterance_id.clone(),
                tokens: seq.tokens.clone(),
                text: seq.text.clone(),
                source_tag: seq.source_tag.clone(),
            };
            serde_json::to_writer(&mut out, &line).map_err(|e| Error::json(&texts_path, e))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(&texts_path).map_err(|e| Error::io(&texts_path, e))?;
        f.write_all(&out).map_err(|e| Error::io(&texts_path, e))?;
        f.sync_all().map_err(|e| Error::io(&texts_path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join(META_FILE);
        let meta_text = match fs::read_to_string(&meta_path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::corrupt(&meta_path, "missing meta.json"))
            }
            Err(e) => return Err(Error::io(&meta_path, e)),
        };
        let meta: DatastoreMeta =
            serde_json::from_str(&meta_text).map_err(|e| Error::json(&meta_path, e))?;
        if meta.format_version != DATASTORE_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: meta.format_version,
                supported: DATASTORE_FORMAT_VERSION,
            });
        }

        let texts_path = dir.join(TEXTS_FILE);
        let texts = fs::read_to_string(&texts_path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::corrupt(&texts_path, "missing texts.jsonl"),
            _ => Error::io(&texts_path, e),
        })?;
        let texts: Vec<SequenceText> = texts
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(&texts_path, e)))
            .collect::<Result<_>>()?;

        let seq_path = dir.join(SEQUENCES_FILE);
        let mut raw = read_tensors(&seq_path)?;
        if raw.len() != 1 {
            return Err(Error::corrupt(&seq_path, "expected one tensor"));
        }
        let raw = raw.pop().unwrap().into_matrix()?;

        let entries_path = dir.join(ENTRIES_FILE);
        let mut tensors = read_tensors(&entries_path)?.into_iter();
        let (Some(keys), Some(refs), None) = (tensors.next(), tensors.next(), tensors.next())
        else {
            return Err(Error::corrupt(
                &entries_path,
                "expected keys and refs tensors",
            ));
        };
        let normalized_keys = keys.into_matrix()?;
        if refs.dims != [meta.entry_count, 3] {
            return Err(Error::corrupt(&entries_path, "refs tensor has wrong shape"));
        }
        let refs = refs.into_u32()?;

        let bad = |why: &str| Error::corrupt(dir, why.to_string());
        if raw.rows() != meta.entry_count
            || raw.cols() != meta.dim
            || normalized_keys.rows() != meta.entry_count
            || normalized_keys.cols() != meta.dim
            || texts.len() != meta.sequence_count
        {
            return Err(bad("file shapes disagree with meta.json"));
        }

        let mut sequences = Vec::with_capacity(texts.len());
        let mut offset = 0usize;
        for (i, t) in texts.into_iter().enumerate() {
            if t.seq_id as usize != i {
                return Err(bad("seq_ids are not dense"));
            }
            let len = t.tokens.len();
            if offset + len > raw.rows() {
                return Err(bad("token counts exceed stored embeddings"));
            }
            let rows: Vec<usize> = (offset..offset + len).collect();
            sequences.push(SequenceRecord {
                seq_id: t.seq_id,
                utterance_id: t.utterance_id,
                embeddings: raw.select_rows(&rows),
                tokens: t.tokens,
                text: t.text,
                source_tag: t.source_tag,
            });
            offset += len;
        }
        if offset != meta.entry_count {
            return Err(bad("token counts disagree with entry_count"));
        }

        let entries: Vec<EntryRef> = refs
            .chunks_exact(3)
            .map(|c| EntryRef {
                seq_id: c[0],
                position: c[1],
                value: c[2],
            })
            .collect();
        for r in &entries {
            let ok = sequences
                .get(r.seq_id as usize)
                .and_then(|s| s.tokens.get(r.position as usize))
                == Some(&r.value);
            if !ok {
                return Err(bad("entry back-reference does not resolve"));
            }
        }

        Ok(Self {
            meta,
            sequences,
            entries,
            normalized_keys,
        })
    }
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "datastore".into());
    dir.with_file_name(format!(".{name}.{tag}-{}", std::process::id()))
}

/// One utterance offered to the builder.
#[derive(Debug, Clone)]
pub enum CorpusItem {
    /// Frame posteriors and hidden states, aligned against the transcript.
    Aligned {
        utterance_id: String,
        grid: LogPosteriorGrid,
        hidden: Matrix,
        transcript: Transcript,
        source_tag: String,
    },
    /// Per-token embeddings computed elsewhere (e.g. by a decoder model).
    Pretokenized {
        utterance_id: String,
        embeddings: Matrix,
        tokens: Vec<u32>,
        text: String,
        source_tag: String,
    },
}

impl CorpusItem {
    pub fn utterance_id(&self) -> &str {
        match self {
            CorpusItem::Aligned { utterance_id, .. }
            | CorpusItem::Pretokenized { utterance_id, .. } => utterance_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedItem {
    pub utterance_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SkipReport {
    pub skipped: Vec<SkippedItem>,
}

impl SkipReport {
    pub fn len(&self) -> usize {
        self.skipped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skipped.is_empty()
    }
}

/// Single-writer datastore builder; seq_ids follow ingestion order.
#[derive(Debug, Default)]
pub struct DatastoreBuilder {
    pooling: Pooling,
    kind: Option<TokenizerKind>,
    /// Kind fixed up front; pre-tokenized items then count as this kind.
    declared: bool,
    dim: Option<usize>,
    sequences: Vec<SequenceRecord>,
    report: SkipReport,
}

impl DatastoreBuilder {
    pub fn new(pooling: Pooling) -> Self {
        Self {
            pooling,
            ..Self::default()
        }
    }

    /// Records `kind` as the tokenizer for the whole datastore, e.g. when
    /// the pre-tokenized items were pooled from CTC alignments elsewhere.
    pub fn with_tokenizer_kind(mut self, kind: TokenizerKind) -> Self {
        self.kind = Some(kind);
        self.declared = true;
        self
    }

    pub fn push(&mut self, item: CorpusItem) -> Result<()> {
        let kind = match (&item, self.kind) {
            (CorpusItem::Aligned { .. }, _) => TokenizerKind::Ctc,
            (CorpusItem::Pretokenized { .. }, Some(k)) if self.declared => k,
            (CorpusItem::Pretokenized { .. }, _) => TokenizerKind::AedPretokenized,
        };
        match self.kind {
            None => self.kind = Some(kind),
            Some(k) if k != kind => {
                return Err(Error::InvalidInput(format!(
                    "utterance {} mixes tokenizer kinds within one datastore",
                    item.utterance_id()
                )))
            }
            Some(_) => {}
        }

        let (utterance_id, embeddings, tokens, text, source_tag) = match item {
            CorpusItem::Aligned {
                utterance_id,
                grid,
                hidden,
                transcript,
                source_tag,
            } => match align_and_pool(&grid, &hidden, &transcript, self.pooling) {
                Ok((_, emb)) => {
                    let text = transcript.text.clone().unwrap_or_default();
                    (utterance_id, emb, transcript.tokens, text, source_tag)
                }
                Err(Error::InfeasibleAlignment(reason)) => {
                    self.report.skipped.push(SkippedItem {
                        utterance_id,
                        reason,
                    });
                    return Ok(());
                }
                Err(e) => return Err(e),
            },
            CorpusItem::Pretokenized {
                utterance_id,
                embeddings,
                tokens,
                text,
                source_tag,
            } => (utterance_id, embeddings, tokens, text, source_tag),
        };

        if tokens.is_empty() {
            return Err(Error::InvalidInput(format!(
                "utterance {utterance_id} has no tokens"
            )));
        }
        if embeddings.rows() != tokens.len() {
            return Err(Error::DimensionMismatch(format!(
                "utterance {utterance_id}: {} embeddings for {} tokens",
                embeddings.rows(),
                tokens.len()
            )));
        }
        if !embeddings.is_finite() {
            return Err(Error::InvalidInput(format!(
                "utterance {utterance_id} has non-finite embeddings"
            )));
        }
        match self.dim {
            None => self.dim = Some(embeddings.cols()),
            Some(d) if d != embeddings.cols() => {
                return Err(Error::DimensionMismatch(format!(
                    "utterance {utterance_id} has dim {}, datastore has {d}",
                    embeddings.cols()
                )))
            }
            Some(_) => {}
        }

        self.sequences.push(SequenceRecord {
            seq_id: self.sequences.len() as u32,
            utterance_id,
            embeddings,
            tokens,
            text,
            source_tag,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<(Datastore, SkipReport)> {
        if self.sequences.is_empty() {
            return Err(Error::EmptyCorpus {
                skipped: self.report.len(),
            });
        }
        let kind = self.kind.expect("kind set with first sequence");
        let dim = self.dim.expect("dim set with first sequence");
        Ok((Datastore::assemble(self.sequences, kind, dim), self.report))
    }
}

pub fn build(
    corpus: impl IntoIterator<Item = CorpusItem>,
    pooling: Pooling,
) -> Result<(Datastore, SkipReport)> {
    let mut builder = DatastoreBuilder::new(pooling);
    for item in corpus {
        builder.push(item)?;
    }
    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pre(id: &str, len: usize, dim: usize, source: &str, base: f32) -> CorpusItem {
        let data = (0..len * dim)
            .map(|i| base + i as f32 * 0.25 - 1.0)
            .collect();
        CorpusItem::Pretokenized {
            utterance_id: id.into(),
            embeddings: Matrix::new(len, dim, data).unwrap(),
            tokens: (0..len as u32).map(|t| t + 10).collect(),
            text: format!("text of {id}"),
            source_tag: source.into(),
        }
    }

    fn uniform_grid(frames: usize, vocab: usize) -> LogPosteriorGrid {
        let v = -(vocab as f64).ln();
        LogPosteriorGrid::new(frames, vocab, 0, vec![v; frames * vocab]).unwrap()
    }

    fn aligned(id: &str, frames: usize, tokens: Vec<u32>) -> CorpusItem {
        CorpusItem::Aligned {
            utterance_id: id.into(),
            grid: uniform_grid(frames, 5),
            hidden: Matrix::new(frames, 2, (0..frames * 2).map(|x| x as f32).collect()).unwrap(),
            transcript: Transcript::with_text(tokens, id),
            source_tag: "ctc".into(),
        }
    }

    #[test]
    fn counts_entries_and_sequences() {
        let (ds, report) = build(
            vec![pre("a", 3, 4, "x", 0.0), pre("b", 4, 4, "y", 1.0)],
            Pooling::Mean,
        )
        .unwrap();
        assert!(report.is_empty());
        assert_eq!(ds.meta().sequence_count, 2);
        assert_eq!(ds.meta().entry_count, 7);
        assert_eq!(
            ds.stats()
                .tokens_per_source
                .values()
                .copied()
                .collect::<Vec<_>>(),
            vec![3, 4]
        );
    }

    #[test]
    fn pretokenized_entries_point_back() {
        let (ds, _) = build(vec![pre("a", 5, 8, "x", 0.5)], Pooling::Mean).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.meta().tokenizer_kind, TokenizerKind::AedPretokenized);
        for i in 0..ds.len() {
            let e = ds.entry(i);
            assert_eq!((e.seq_id, e.position), (0, i as u32));
            let seq = ds.sequence(e.seq_id).unwrap();
            assert_eq!(e.key, seq.embeddings.row(i));
            assert_eq!(e.value, seq.tokens[i]);
            let norm: f64 = e.normalized_key.iter().map(|&x| (x as f64).powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn infeasible_utterances_are_skipped() {
        let corpus = vec![
            aligned("ok1", 4, vec![1, 2]),
            aligned("short", 1, vec![1, 2, 3]),
            aligned("ok2", 5, vec![3, 4, 1]),
        ];
        let (ds, report) = build(corpus, Pooling::Mean).unwrap();
        assert_eq!(ds.meta().sequence_count, 2);
        assert_eq!(ds.meta().tokenizer_kind, TokenizerKind::Ctc);
        assert_eq!(report.len(), 1);
        assert_eq!(report.skipped[0].utterance_id, "short");
        assert_eq!(ds.sequence(1).unwrap().utterance_id, "ok2");
    }

    #[test]
    fn all_skipped_is_empty_corpus() {
        let err = build(vec![aligned("short", 1, vec![1, 2])], Pooling::Mean).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus { skipped: 1 }));
        assert!(matches!(
            build(vec![], Pooling::Mean),
            Err(Error::EmptyCorpus { skipped: 0 })
        ));
    }

    #[test]
    fn dimension_and_kind_checks() {
        let err = build(
            vec![pre("a", 2, 4, "x", 0.0), pre("b", 2, 3, "x", 0.0)],
            Pooling::Mean,
        )
        .unwrap_err();
        assert_eq!(err.name(), "DimensionMismatch");
        let err = build(
            vec![pre("a", 2, 2, "x", 0.0), aligned("b", 3, vec![1])],
            Pooling::Mean,
        )
        .unwrap_err();
        assert_eq!(err.name(), "InvalidInput");
    }

    #[test]
    fn zero_key_normalizes_to_zero() {
        let item = CorpusItem::Pretokenized {
            utterance_id: "z".into(),
            embeddings: Matrix::zeros(1, 3),
            tokens: vec![1],
            text: String::new(),
            source_tag: String::new(),
        };
        let (ds, _) = build(vec![item], Pooling::Mean).unwrap();
        assert_eq!(ds.entry(0).normalized_key, &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn save_load_and_resave_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, _) = build(
            vec![pre("a", 3, 4, "x", 0.0), pre("b", 4, 4, "y", 1.0)],
            Pooling::Mean,
        )
        .unwrap();
        let p1 = dir.path().join("ds1");
        ds.save(&p1).unwrap();
        let back = Datastore::load(&p1).unwrap();
        assert_eq!(back, ds);

        let p2 = dir.path().join("ds2");
        back.save(&p2).unwrap();
        for f in [META_FILE, SEQUENCES_FILE, ENTRIES_FILE, TEXTS_FILE] {
            assert_eq!(
                fs::read(p1.join(f)).unwrap(),
                fs::read(p2.join(f)).unwrap(),
                "{f}"
            );
        }

        // overwrite in place
        let (small, _) = build(vec![pre("c", 1, 4, "z", 2.0)], Pooling::Mean).unwrap();
        small.save(&p1).unwrap();
        assert_eq!(Datastore::load(&p1).unwrap(), small);
    }

    #[test]
    fn load_failures() {
        let dir = tempfile::tempdir().unwrap();
        let err = Datastore::load(dir.path()).unwrap_err();
        assert_eq!(err.name(), "CorruptFile");

        let (ds, _) = build(vec![pre("a", 3, 4, "x", 0.0)], Pooling::Mean).unwrap();
        let p = dir.path().join("ds");
        ds.save(&p).unwrap();
        let mut meta = ds.meta().clone();
        meta.format_version = DATASTORE_FORMAT_VERSION + 1;
        fs::write(p.join(META_FILE), serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(matches!(
            Datastore::load(&p).unwrap_err(),
            Error::VersionMismatch { .. }
        ));

        ds.save(&p).unwrap();
        let mut bytes = fs::read(p.join(ENTRIES_FILE)).unwrap();
        bytes[40] ^= 1;
        fs::write(p.join(ENTRIES_FILE), bytes).unwrap();
        assert_eq!(Datastore::load(&p).unwrap_err().name(), "CorruptFile");
    }
}
