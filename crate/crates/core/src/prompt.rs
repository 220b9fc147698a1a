//! Speech adapter and prompt layout.
//!
//! The layout handed to a downstream LLM is the concatenation
//!
//! ```text
//! Z^0, Y^0, ..., Z^{M-1}, Y^{M-1}, X̂, Ŷ^0, ..., Ŷ^{N-1}
//! ```
//!
//! where `Z^m` is the adapted speech-token sequence of retrieved example
//! `m`, `Y^m` its token ids, `X̂` the adapted input speech tokens and `Ŷ^n`
//! the n-th ASR hypothesis. Text segments carry token ids; embedding lookup
//! belongs to the consumer.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::SequenceRecord;
use crate::error::{Error, Result};
use crate::retrieval::NBestList;
use crate::tensor::{read_tensors, write_tensors, Matrix, Tensor};

pub const DEFAULT_ADAPTER_HIDDEN: usize = 2048;
pub const PROMPT_FORMAT_VERSION: u32 = 1;
pub const ADAPTER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// tanh approximation
    Gelu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
                0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
            }
            Activation::Identity => x,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidParams(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
        })
    }
}

/// Two stacked linear layers: `z = W2 · act(W1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterWeights {
    w1: Matrix,
    b1: Vec<f32>,
    w2: Matrix,
    b2: Vec<f32>,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterHeader {
    format_version: u32,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    activation: Activation,
    tensor_file: String,
}

impl AdapterWeights {
    /// `w1` is `hidden × input`, `w2` is `output × hidden`.
    pub fn new(
        w1: Matrix,
        b1: Vec<f32>,
        w2: Matrix,
        b2: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        if b1.len() != w1.rows() || w2.cols() != w1.rows() || b2.len() != w2.rows() {
            return Err(Error::DimensionMismatch(format!(
                "adapter shapes W1 {}x{}, b1 {}, W2 {}x{}, b2 {} are inconsistent",
                w1.rows(),
                w1.cols(),
                b1.len(),
                w2.rows(),
                w2.cols(),
                b2.len()
            )));
        }
        let finite =
            w1.is_finite() && w2.is_finite() && b1.iter().chain(&b2).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteWeights);
        }
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            activation,
        })
    }

    /// Seeded Glorot-uniform weights with zero biases, for tests and demos.
    pub fn random(
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect();
            Matrix::new(rows, cols, data).unwrap()
        };
        let w1 = layer(hidden, input);
        let w2 = layer(output, hidden);
        Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Applies the adapter row by row.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "adapter expects dim {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        let mut hidden = vec![0.0f64; self.hidden_dim()];
        for (r, row) in x.iter_rows().enumerate() {
            for (j, h) in hidden.iter_mut().enumerate() {
                let pre = self
                    .w1
                    .row(j)
                    .iter()
                    .zip(row)
                    .map(|(&w, &v)| w as f64 * v as f64)
                    .sum::<f64>()
                    + self.b1[j] as f64;
                *h = self.activation.apply(pre);
            }
            for (o, dst) in out.row_mut(r).iter_mut().enumerate() {
                let z = self
                    .w2
                    .row(o)
                    .iter()
                    .zip(&hidden)
                    .map(|(&w, &h)| w as f64 * h)
                    .sum::<f64>()
                    + self.b2[o] as f64;
                *dst = z as f32;
            }
        }
        if !out.is_finite() {
            return Err(Error::InvalidInput("adapter output overflowed".into()));
        }
        Ok(out)
    }

    /// Writes `path` (JSON header) and a sibling `.bin` tensor file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bin = path.with_extension("bin");
        let header = AdapterHeader {
            format_version: ADAPTER_FORMAT_VERSION,
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
            output_dim: self.output_dim(),
            activation: self.activation,
            tensor_file: file_name(&bin),
        };
        write_tensors(
            &bin,
            &[
                self.w1.to_tensor(),
                Tensor::f32(vec![self.b1.len()], self.b1.clone()),
                self.w2.to_tensor(),
                Tensor::f32(vec![self.b2.len()], self.b2.clone()),
            ],
        )?;
        let json = serde_json::to_string_pretty(&header).map_err(|e| Error::json(path, e))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: AdapterHeader =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if header.format_version != ADAPTER_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: header.format_version,
                supported: ADAPTER_FORMAT_VERSION,
            });
        }
        let bin = sibling_path(path, &header.tensor_file);
        let mut t = read_tensors(&bin)?.into_iter();
        let (Some(w1), Some(b1), Some(w2), Some(b2), None) =
            (t.next(), t.next(), t.next(), t.next(), t.next())
        else {
            return Err(Error::corrupt(&bin, "expected W1, b1, W2, b2"));
        };
        let as_vec = |t: Tensor| -> Result<Vec<f32>> {
            match t.data {
                crate::tensor::TensorData::F32(v) if t.dims.len() == 1 => Ok(v),
                _ => Err(Error::corrupt(&bin, "bias must be a rank-1 f32 tensor")),
            }
        };
        let weights = Self::new(
            w1.into_matrix()?,
            as_vec(b1)?,
            w2.into_matrix()?,
            as_vec(b2)?,
            header.activation,
        )?;
        if weights.input_dim() != header.input_dim
            || weights.hidden_dim() != header.hidden_dim
            || weights.output_dim() != header.output_dim
        {
            return Err(Error::corrupt(path, "header shapes disagree with tensors"));
        }
        Ok(weights)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn sibling_path(path: &Path, name: &str) -> PathBuf {
    path.parent()
        .map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PromptSegment {
    ExampleSpeech { example: usize, embeddings: Matrix },
    ExampleText { example: usize, tokens: Vec<u32> },
    InputSpeech { embeddings: Matrix },
    Hypothesis { rank: usize, tokens: Vec<u32> },
}

impl PromptSegment {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PromptSegment::ExampleSpeech { .. } => "example_speech",
            PromptSegment::ExampleText { .. } => "example_text",
            PromptSegment::InputSpeech { .. } => "input_speech",
            PromptSegment::Hypothesis { .. } => "hypothesis",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptLayout {
    segments: Vec<PromptSegment>,
    examples: usize,
    hypotheses: usize,
}

impl PromptLayout {
    /// Validates segment order: `(Z^m, Y^m)` pairs for m = 0.., then the
    /// input speech, then hypotheses 0..N with N >= 1.
    pub fn new(segments: Vec<PromptSegment>) -> Result<Self> {
        let violation = |i: usize, why: &str| Error::FormatViolation(format!("segment {i}: {why}"));
        let mut i = 0;
        let mut examples = 0;
        let mut speech_dim: Option<usize> = None;
        let mut check_dim = |m: &Matrix, i: usize| match speech_dim {
            None => {
                speech_dim = Some(m.cols());
                Ok(())
            }
            Some(d) if d == m.cols() => Ok(()),
            Some(_) => Err(violation(i, "speech segments disagree on width")),
        };

        while let Some(PromptSegment::ExampleSpeech {
            example,
            embeddings,
        }) = segments.get(i)
        {
            if *example != examples {
                return Err(violation(i, "example speech out of order"));
            }
            check_dim(embeddings, i)?;
            match segments.get(i + 1) {
                Some(PromptSegment::ExampleText { example: m, .. }) if *m == examples => {}
                _ => {
                    return Err(violation(
                        i + 1,
                        "example speech must be followed by its text",
                    ))
                }
            }
            examples += 1;
            i += 2;
        }
        match segments.get(i) {
            Some(PromptSegment::InputSpeech { embeddings }) => check_dim(embeddings, i)?,
            _ => return Err(violation(i, "expected the input speech segment")),
        }
        i += 1;
        let mut hypotheses = 0;
        while let Some(seg) = segments.get(i) {
            match seg {
                PromptSegment::Hypothesis { rank, .. } if *rank == hypotheses => hypotheses += 1,
                _ => return Err(violation(i, "expected the next hypothesis")),
            }
            i += 1;
        }
        if hypotheses == 0 {
            return Err(violation(i, "at least one hypothesis is required"));
        }
        Ok(Self {
            segments,
            examples,
            hypotheses,
        })
    }

    pub fn segments(&self) -> &[PromptSegment] {
        &self.segments
    }

    /// M
    pub fn example_count(&self) -> usize {
        self.examples
    }

    /// N
    pub fn hypothesis_count(&self) -> usize {
        self.hypotheses
    }
}

/// Builds the layout for `examples` (best first), the input speech tokens
/// and the N-best list.
pub fn assemble_prompt(
    examples: &[&SequenceRecord],
    adapter: &AdapterWeights,
    input_embeddings: &Matrix,
    nbest: &NBestList,
) -> Result<PromptLayout> {
    let mut segments = Vec::with_capacity(2 * examples.len() + 1 + nbest.len());
    for (m, rec) in examples.iter().enumerate() {
        segments.push(PromptSegment::ExampleSpeech {
            example: m,
            embeddings: adapter.forward(&rec.embeddings)?,
        });
        segments.push(PromptSegment::ExampleText {
            example: m,
            tokens: rec.tokens.clone(),
        });
    }
    segments.push(PromptSegment::InputSpeech {
        embeddings: adapter.forward(input_embeddings)?,
    });
    for (n, hyp) in nbest.hypotheses().iter().enumerate() {
        segments.push(PromptSegment::Hypothesis {
            rank: n,
            tokens: hyp.clone(),
        });
    }
    PromptLayout::new(segments)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SegmentRecord {
    ExampleSpeech {
        index: usize,
        tensor: usize,
        rows: usize,
        cols: usize,
    },
    ExampleText {
        index: usize,
        tokens: Vec<u32>,
    },
    InputSpeech {
        tensor: usize,
        rows: usize,
        cols: usize,
    },
    Hypothesis {
        index: usize,
        tokens: Vec<u32>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptManifest {
    format_version: u32,
    example_count: usize,
    hypothesis_count: usize,
    tensor_file: String,
    segments: Vec<SegmentRecord>,
}

/// Writes `path` (JSON manifest) and a sibling `.bin` holding the speech
/// payloads in segment order.
pub fn serialize_prompt(layout: &PromptLayout, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bin = path.with_extension("bin");
    let mut tensors = Vec::new();
    let mut records = Vec::with_capacity(layout.segments.len());
    for seg in &layout.segments {
        records.push(match seg {
            PromptSegment::ExampleSpeech {
                example,
                embeddings,
            } => {
                tensors.push(embeddings.to_tensor());
                SegmentRecord::ExampleSpeech {
                    index: *example,
                    tensor: tensors.len() - 1,
                    rows: embeddings.rows(),
                    cols: embeddings.cols(),
                }
            }
            PromptSegment::ExampleText { example, tokens } => SegmentRecord::ExampleText {
                index: *example,
                tokens: tokens.clone(),
            },
            PromptSegment::InputSpeech { embeddings } => {
                tensors.push(embeddings.to_tensor());
                SegmentRecord::InputSpeech {
                    tensor: tensors.len() - 1,
                    rows: embeddings.rows(),
                    cols: embeddings.cols(),
                }
            }
            PromptSegment::Hypothesis { rank, tokens } => SegmentRecord::Hypothesis {
                index: *rank,
                tokens: tokens.clone(),
            },
        });
    }
    let manifest = PromptManifest {
        format_version: PROMPT_FORMAT_VERSION,
        example_count: layout.examples,
        hypothesis_count: layout.hypotheses,
        tensor_file: file_name(&bin),
        segments: records,
    };
    write_tensors(&bin, &tensors)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(path, e))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_prompt(path: impl AsRef<Path>) -> Result<PromptLayout> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: PromptManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if manifest.format_version != PROMPT_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            supported: PROMPT_FORMAT_VERSION,
        });
    }
    let bin = sibling_path(path, &manifest.tensor_file);
    let mut tensors: Vec<Option<Tensor>> = read_tensors(&bin)?.into_iter().map(Some).collect();
    let mut take = |idx: usize, rows: usize, cols: usize| -> Result<Matrix> {
        let t = tensors
            .get_mut(idx)
            .and_then(Option::take)
            .ok_or_else(|| Error::FormatViolation(format!("tensor {idx} missing or reused")))?;
        let m = t.into_matrix()?;
        if (m.rows(), m.cols()) != (rows, cols) {
            return Err(Error::FormatViolation(format!(
                "tensor {idx} shape disagrees with manifest"
            )));
        }
        Ok(m)
    };
    let mut segments = Vec::with_capacity(manifest.segments.len());
    for rec in manifest.segments {
        segments.push(match rec {
            SegmentRecord::ExampleSpeech {
                index,
                tensor,
                rows,
                cols,
            } => PromptSegment::ExampleSpeech {
                example: index,
                embeddings: take(tensor, rows, cols)?,
            },
            SegmentRecord::ExampleText { index, tokens } => PromptSegment::ExampleText {
                example: index,
                tokens,
            },
            SegmentRecord::InputSpeech { tensor, rows, cols } => PromptSegment::InputSpeech {
                embeddings: take(tensor, rows, cols)?,
            },
            SegmentRecord::Hypothesis { index, tokens } => PromptSegment::Hypothesis {
                rank: index,
                tokens,
            },
        });
    }
    let layout = PromptLayout::new(segments)?;
    if layout.examples != manifest.example_count || layout.hypotheses != manifest.hypothesis_count {
        return Err(Error::FormatViolation(
            "segment counts disagree with manifest header".into(),
        ));
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.row_mut(i)[i] = 1.0;
        }
        m
    }

    fn record(seq_id: u32, rows: usize, dim: usize) -> SequenceRecord {
        SequenceRecord {
            seq_id,
            utterance_id: format!("u{seq_id}"),
            embeddings: Matrix::new(rows, dim, (0..rows * dim).map(|i| i as f32 * 0.1).collect())
                .unwrap(),
            tokens: (0..rows as u32).collect(),
            text: String::new(),
            source_tag: String::new(),
        }
    }

    #[test]
    fn identity_adapter_is_identity() {
        let a = AdapterWeights::new(
            eye(3),
            vec![0.0; 3],
            eye(3),
            vec![0.0; 3],
            Activation::Identity,
        )
        .unwrap();
        let x = Matrix::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -0.25]).unwrap();
        assert_eq!(a.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_yields_output_bias() {
        for act in [Activation::Relu, Activation::Identity] {
            let mut a = AdapterWeights::random(3, 5, 2, act, 1);
            a.b2 = vec![0.5, -1.5];
            let out = a.forward(&Matrix::zeros(4, 3)).unwrap();
            for row in out.iter_rows() {
                assert_eq!(row, &[0.5, -1.5]);
            }
        }
    }

    #[test]
    fn adapter_validation() {
        assert_eq!(
            AdapterWeights::new(eye(3), vec![0.0; 2], eye(3), vec![0.0; 3], Activation::Relu)
                .unwrap_err()
                .name(),
            "DimensionMismatch"
        );
        let mut w = eye(2);
        w.row_mut(0)[1] = f32::NAN;
        assert_eq!(
            AdapterWeights::new(w, vec![0.0; 2], eye(2), vec![0.0; 2], Activation::Relu)
                .unwrap_err()
                .name(),
            "NonFiniteWeights"
        );
        let a = AdapterWeights::random(3, 4, 2, Activation::Relu, 0);
        assert_eq!(
            a.forward(&Matrix::zeros(1, 2)).unwrap_err().name(),
            "DimensionMismatch"
        );
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(Activation::Gelu.apply(0.0), 0.0);
        assert!((Activation::Gelu.apply(1.0) - 0.841_192).abs() < 1e-5);
        assert!((Activation::Gelu.apply(-1.0) + 0.158_808).abs() < 1e-5);
    }

    #[test]
    fn layout_shapes() {
        let adapter = AdapterWeights::random(4, 8, 6, Activation::Relu, 3);
        let input = Matrix::zeros(5, 4);
        let r0 = record(0, 3, 4);
        let nb = NBestList::new(vec![vec![1, 2], vec![1, 3]]).unwrap();
        let layout = assemble_prompt(&[&r0], &adapter, &input, &nb).unwrap();
        let kinds: Vec<_> = layout.segments().iter().map(|s| s.kind_name()).collect();
        assert_eq!(
            kinds,
            [
                "example_speech",
                "example_text",
                "input_speech",
                "hypothesis",
                "hypothesis"
            ]
        );
        match &layout.segments()[0] {
            PromptSegment::ExampleSpeech { embeddings, .. } => {
                assert_eq!((embeddings.rows(), embeddings.cols()), (3, 6))
            }
            _ => unreachable!(),
        }

        let nb1 = NBestList::new(vec![vec![1]]).unwrap();
        let layout = assemble_prompt(&[], &adapter, &input, &nb1).unwrap();
        assert_eq!(layout.segments().len(), 2);
        assert_eq!((layout.example_count(), layout.hypothesis_count()), (0, 1));

        let recs: Vec<SequenceRecord> = (0..4).map(|i| record(i, 2, 4)).collect();
        let refs: Vec<&SequenceRecord> = recs.iter().collect();
        let nb5 = NBestList::new(vec![vec![1]; 5]).unwrap();
        assert_eq!(
            assemble_prompt(&refs, &adapter, &input, &nb5)
                .unwrap()
                .segments()
                .len(),
            14
        );
    }

    #[test]
    fn layout_rejects_bad_order() {
        let e = Matrix::zeros(1, 2);
        let bad = vec![
            PromptSegment::ExampleText {
                example: 0,
                tokens: vec![1],
            },
            PromptSegment::ExampleSpeech {
                example: 0,
                embeddings: e.clone(),
            },
            PromptSegment::InputSpeech {
                embeddings: e.clone(),
            },
            PromptSegment::Hypothesis {
                rank: 0,
                tokens: vec![1],
            },
        ];
        assert_eq!(
            PromptLayout::new(bad).unwrap_err().name(),
            "FormatViolation"
        );
        let no_hyp = vec![PromptSegment::InputSpeech {
            embeddings: e.clone(),
        }];
        assert_eq!(
            PromptLayout::new(no_hyp).unwrap_err().name(),
            "FormatViolation"
        );
        let skipped_rank = vec![
            PromptSegment::InputSpeech { embeddings: e },
            PromptSegment::Hypothesis {
                rank: 1,
                tokens: vec![],
            },
        ];
        assert_eq!(
            PromptLayout::new(skipped_rank).unwrap_err().name(),
            "FormatViolation"
        );
    }

    #[test]
    fn prompt_round_trip_and_violation() {
        let dir = tempfile::tempdir().unwrap();
        let adapter = AdapterWeights::random(4, 8, 6, Activation::Gelu, 3);
        let input = Matrix::new(2, 4, vec![0.1, 0.2, 0.3, 0.4, -1.0, 2.0, 0.0, 1.0]).unwrap();
        let r0 = record(0, 3, 4);
        let nb = NBestList::new(vec![vec![1, 2], vec![1, 3]]).unwrap();
        let layout = assemble_prompt(&[&r0], &adapter, &input, &nb).unwrap();
        let path = dir.path().join("prompt.json");
        serialize_prompt(&layout, &path).unwrap();
        assert!(dir.path().join("prompt.bin").exists());
        assert_eq!(load_prompt(&path).unwrap(), layout);

        let empty = assemble_prompt(&[], &adapter, &input, &nb).unwrap();
        let p2 = dir.path().join("empty.json");
        serialize_prompt(&empty, &p2).unwrap();
        assert_eq!(load_prompt(&p2).unwrap(), empty);

        // swap the first two segments in the manifest
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["segments"].as_array_mut().unwrap().swap(0, 1);
        fs::write(&path, v.to_string()).unwrap();
        assert_eq!(load_prompt(&path).unwrap_err().name(), "FormatViolation");
    }

    #[test]
    fn adapter_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = AdapterWeights::random(5, 7, 3, Activation::Gelu, 42);
        let p = dir.path().join("adapter.json");
        a.save(&p).unwrap();
        assert_eq!(AdapterWeights::load(&p).unwrap(), a);
    }
}
