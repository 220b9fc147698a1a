//! JSONL corpus manifests.
//!
//! A manifest line describes one utterance. With `"tokenized": false` the
//! `features` file is a `T × d` hidden-state matrix and `logits` a `T × V`
//! log-posterior matrix, aligned against `transcript`. With
//! `"tokenized": true`, `features` already holds one `L × d` row per
//! transcript token and `logits` must be absent. Relative paths resolve
//! against the manifest's directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::alignment::{LogPosteriorGrid, Transcript, DEFAULT_BLANK_ID};
use crate::datastore::{CorpusItem, TokenizerKind};
use crate::error::{Error, Result};
use crate::tensor::{read_matrix, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub tokenized: bool,
    pub features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<String>,
    #[serde(default)]
    pub transcript: Vec<u32>,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub source_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blank_id: Option<u32>,
    /// Tokenizer that produced pre-tokenized features, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<TokenizerKind>,
}

/// Features of one manifest record after loading.
#[derive(Debug, Clone)]
pub enum LoadedFeatures {
    Frames {
        grid: LogPosteriorGrid,
        hidden: Matrix,
    },
    Tokens(Matrix),
}

impl ManifestRecord {
    fn check(&self) -> Result<()> {
        match (self.tokenized, &self.logits) {
            (true, Some(_)) => Err(Error::InvalidInput(format!(
                "{}: tokenized record must not carry logits",
                self.utterance_id
            ))),
            (false, None) => Err(Error::InvalidInput(format!(
                "{}: frame-level record needs a logits file",
                self.utterance_id
            ))),
            _ => Ok(()),
        }
    }

    pub fn load_features(&self, base: &Path) -> Result<LoadedFeatures> {
        self.check()?;
        let features = read_matrix(resolve(base, &self.features))?;
        match &self.logits {
            None => Ok(LoadedFeatures::Tokens(features)),
            Some(logits) => {
                let grid = LogPosteriorGrid::from_matrix(
                    &read_matrix(resolve(base, logits))?,
                    self.blank_id.unwrap_or(DEFAULT_BLANK_ID),
                )?;
                Ok(LoadedFeatures::Frames {
                    grid,
                    hidden: features,
                })
            }
        }
    }

    /// Loads the record as a datastore corpus item.
    pub fn load_item(&self, base: &Path) -> Result<CorpusItem> {
        Ok(match self.load_features(base)? {
            LoadedFeatures::Frames { grid, hidden } => CorpusItem::Aligned {
                utterance_id: self.utterance_id.clone(),
                grid,
                hidden,
                transcript: Transcript::with_text(self.transcript.clone(), self.text.clone()),
                source_tag: self.source_tag.clone(),
            },
            LoadedFeatures::Tokens(embeddings) => CorpusItem::Pretokenized {
                utterance_id: self.utterance_id.clone(),
                embeddings,
                tokens: self.transcript.clone(),
                text: self.text.clone(),
                source_tag: self.source_tag.clone(),
            },
        })
    }
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Directory against which a file's relative paths resolve.
pub fn base_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::json(path, e))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    read_jsonl(path)
}
