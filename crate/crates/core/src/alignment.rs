//! CTC forced alignment.
//!
//! The transcript is expanded to `[blank, y1, blank, y2, ..., yL, blank]`
//! and a max-product (log domain) trellis is filled over frames × expanded
//! states. Backtracking the best terminal cell gives one state per frame;
//! collapsing that path yields one frame span per transcript token, and the
//! hidden states inside each span are pooled into the token's embedding.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_BLANK_ID: u32 = 0;

const NORMALIZATION_TOLERANCE: f64 = 1e-3;

/// Frame-level log-posteriors, `frames × vocab_size`, natural log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPosteriorGrid {
    frames: usize,
    vocab_size: usize,
    blank_id: u32,
    values: Vec<f64>,
}

impl LogPosteriorGrid {
    pub fn new(frames: usize, vocab_size: usize, blank_id: u32, values: Vec<f64>) -> Result<Self> {
        if frames.checked_mul(vocab_size) != Some(values.len()) {
            return Err(Error::DimensionMismatch(format!(
                "grid {frames}x{vocab_size} needs {} values, got {}",
                frames.saturating_mul(vocab_size),
                values.len()
            )));
        }
        if blank_id as usize >= vocab_size {
            return Err(Error::InvalidInput(format!(
                "blank id {blank_id} outside vocabulary of {vocab_size}"
            )));
        }
        for (t, row) in values.chunks(vocab_size.max(1)).enumerate() {
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::InvalidInput(format!("frame {t} holds NaN or +inf")));
            }
            let lse = log_sum_exp(row);
            if lse.is_nan() || lse.abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "frame {t} is not a normalized log distribution (logsumexp = {lse})"
                )));
            }
        }
        Ok(Self {
            frames,
            vocab_size,
            blank_id,
            values,
        })
    }

    /// Builds a grid from an f32 `T × V` matrix (the on-disk representation).
    pub fn from_matrix(m: &Matrix, blank_id: u32) -> Result<Self> {
        let values = m.as_slice().iter().map(|&v| v as f64).collect();
        Self::new(m.rows(), m.cols(), blank_id, values)
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    #[inline]
    pub fn blank_id(&self) -> u32 {
        self.blank_id
    }

    #[inline]
    pub fn log_prob(&self, frame: usize, token: u32) -> f64 {
        self.values[frame * self.vocab_size + token as usize]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.vocab_size..(frame + 1) * self.vocab_size]
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Reference token sequence. `text` is carried for display only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub tokens: Vec<u32>,
    pub text: Option<String>,
}

impl Transcript {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self { tokens, text: None }
    }

    pub fn with_text(tokens: Vec<u32>, text: impl Into<String>) -> Self {
        Self {
            tokens,
            text: Some(text.into()),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self, grid: &LogPosteriorGrid) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidInput("transcript is empty".into()));
        }
        for &tok in &self.tokens {
            if tok == grid.blank_id {
                return Err(Error::InvalidInput(format!(
                    "transcript contains blank id {tok}"
                )));
            }
            if tok as usize >= grid.vocab_size {
                return Err(Error::InvalidInput(format!(
                    "token {tok} outside vocabulary of {}",
                    grid.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// Max-product CTC lattice over `frames × (2L + 1)` expanded states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trellis {
    frames: usize,
    labels: Vec<u32>,
    values: Vec<f64>,
}

impl Trellis {
    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn states(&self) -> usize {
        self.labels.len()
    }

    /// Label emitted by expanded state `s` (blank on even states).
    #[inline]
    pub fn label(&self, s: usize) -> u32 {
        self.labels[s]
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.labels.len() + s]
    }

    /// Best log-probability over the two legal end states.
    pub fn terminal_max(&self) -> f64 {
        let last = self.frames - 1;
        let s = self.states();
        self.get(last, s - 2).max(self.get(last, s - 1))
    }

    fn can_skip(&self, s: usize) -> bool {
        s >= 2 && s % 2 == 1 && self.labels[s] != self.labels[s - 2]
    }
}

pub fn build_trellis(grid: &LogPosteriorGrid, transcript: &Transcript) -> Result<Trellis> {
    transcript.validate(grid)?;
    let frames = grid.frames();
    if frames < transcript.len() {
        return Err(Error::InfeasibleAlignment(format!(
            "{frames} frames cannot emit {} tokens",
            transcript.len()
        )));
    }

    let blank = grid.blank_id();
    let mut labels = Vec::with_capacity(2 * transcript.len() + 1);
    labels.push(blank);
    for &tok in &transcript.tokens {
        labels.push(tok);
        labels.push(blank);
    }
    let states = labels.len();

    let mut trellis = Trellis {
        frames,
        labels,
        values: vec![f64::NEG_INFINITY; frames * states],
    };
    trellis.values[0] = grid.log_prob(0, blank);
    trellis.values[1] = grid.log_prob(0, trellis.labels[1]);

    for t in 1..frames {
        let (prev, cur) = trellis.values.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        let cur = &mut cur[..states];
        for s in 0..states {
            let mut best = prev[s];
            if s >= 1 {
                best = best.max(prev[s - 1]);
            }
            if s >= 2 && s % 2 == 1 && trellis.labels[s] != trellis.labels[s - 2] {
                best = best.max(prev[s - 2]);
            }
            cur[s] = best + grid.log_prob(t, trellis.labels[s]);
        }
    }

    if trellis.terminal_max() == f64::NEG_INFINITY {
        return Err(Error::InfeasibleAlignment(
            "no legal path covers the transcript".into(),
        ));
    }
    Ok(trellis)
}

/// One expanded-label state per frame plus the path's summed emission score.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePath {
    pub states: Vec<usize>,
    pub labels: Vec<u32>,
    pub log_prob: f64,
}

/// Backtracks the most likely path.
///
/// Ties resolve towards ending on the final label rather than the final
/// blank, and towards stay, then advance, then skip at each step.
pub fn best_path(
    trellis: &Trellis,
    grid: &LogPosteriorGrid,
    transcript: &Transcript,
) -> Result<FramePath> {
    let states = trellis.states();
    if states != 2 * transcript.len() + 1 || trellis.frames() != grid.frames() {
        return Err(Error::DimensionMismatch(
            "trellis was built for a different grid or transcript".into(),
        ));
    }
    let last = trellis.frames() - 1;
    let on_label = trellis.get(last, states - 2);
    let on_blank = trellis.get(last, states - 1);
    if on_label == f64::NEG_INFINITY && on_blank == f64::NEG_INFINITY {
        return Err(Error::InfeasibleAlignment(
            "both terminal states are unreachable".into(),
        ));
    }
    let mut s = if on_blank > on_label {
        states - 1
    } else {
        states - 2
    };

    let mut path = vec![0usize; trellis.frames()];
    path[last] = s;
    for t in (1..=last).rev() {
        let mut best_state = s;
        let mut best = trellis.get(t - 1, s);
        if s >= 1 && trellis.get(t - 1, s - 1) > best {
            best_state = s - 1;
            best = trellis.get(t - 1, s - 1);
        }
        if trellis.can_skip(s) && trellis.get(t - 1, s - 2) > best {
            best_state = s - 2;
        }
        s = best_state;
        path[t - 1] = s;
    }
    debug_assert!(path[0] <= 1);

    let labels: Vec<u32> = path.iter().map(|&s| trellis.label(s)).collect();
    let log_prob = labels
        .iter()
        .enumerate()
        .fold(0.0, |acc, (t, &tok)| acc + grid.log_prob(t, tok));
    Ok(FramePath {
        states: path,
        labels,
        log_prob,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub token: u32,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenAlignment {
    pub spans: Vec<TokenSpan>,
    pub path_logprob: f64,
}

impl TokenAlignment {
    pub fn tokens(&self) -> Vec<u32> {
        self.spans.iter().map(|s| s.token).collect()
    }
}

/// Collapses a frame path into one span per transcript token; blank frames
/// belong to no span.
pub fn token_spans(path: &FramePath, transcript: &Transcript) -> TokenAlignment {
    let mut spans: Vec<TokenSpan> = Vec::with_capacity(transcript.len());
    let mut prev_state = usize::MAX;
    for (t, &s) in path.states.iter().enumerate() {
        if s % 2 == 1 {
            if s == prev_state {
                spans.last_mut().expect("open span").end = t + 1;
            } else {
                spans.push(TokenSpan {
                    token: transcript.tokens[(s - 1) / 2],
                    start: t,
                    end: t + 1,
                });
            }
        }
        prev_state = s;
    }
    debug_assert_eq!(spans.len(), transcript.len());
    TokenAlignment {
        spans,
        path_logprob: path.log_prob,
    }
}

/// Trellis, backtrack and span collapse in one call.
pub fn force_align(grid: &LogPosteriorGrid, transcript: &Transcript) -> Result<TokenAlignment> {
    let trellis = build_trellis(grid, transcript)?;
    let path = best_path(&trellis, grid, transcript)?;
    Ok(token_spans(&path, transcript))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Mean,
    First,
    Max,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "first" => Ok(Pooling::First),
            "max" => Ok(Pooling::Max),
            other => Err(Error::InvalidParams(format!("unknown pooling `{other}`"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::First => "first",
            Pooling::Max => "max",
        })
    }
}

/// Pools the hidden-state rows of each span into one `d`-dim speech token.
pub fn extract_token_embeddings(
    hidden: &Matrix,
    alignment: &TokenAlignment,
    pooling: Pooling,
) -> Result<Matrix> {
    let frames_needed = alignment.spans.last().map_or(0, |s| s.end);
    if hidden.rows() < frames_needed {
        return Err(Error::DimensionMismatch(format!(
            "alignment reaches frame {frames_needed}, hidden states have {} frames",
            hidden.rows()
        )));
    }
    if !hidden.is_finite() {
        return Err(Error::InvalidInput(
            "hidden states contain non-finite values".into(),
        ));
    }
    let dim = hidden.cols();
    let mut out = Matrix::zeros(alignment.spans.len(), dim);
    for (i, span) in alignment.spans.iter().enumerate() {
        let dst = out.row_mut(i);
        match pooling {
            Pooling::First => dst.copy_from_slice(hidden.row(span.start)),
            Pooling::Max => {
                dst.copy_from_slice(hidden.row(span.start));
                for t in span.start + 1..span.end {
                    for (d, &v) in dst.iter_mut().zip(hidden.row(t)) {
                        *d = d.max(v);
                    }
                }
            }
            Pooling::Mean => {
                let mut acc = vec![0.0f64; dim];
                for t in span.start..span.end {
                    for (a, &v) in acc.iter_mut().zip(hidden.row(t)) {
                        *a += v as f64;
                    }
                }
                let n = span.len() as f64;
                for (d, a) in dst.iter_mut().zip(acc) {
                    *d = (a / n) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Checks `hidden` against `grid` and runs alignment plus pooling.
pub fn align_and_pool(
    grid: &LogPosteriorGrid,
    hidden: &Matrix,
    transcript: &Transcript,
    pooling: Pooling,
) -> Result<(TokenAlignment, Matrix)> {
    if hidden.rows() != grid.frames() {
        return Err(Error::DimensionMismatch(format!(
            "hidden states have {} frames, posteriors have {}",
            hidden.rows(),
            grid.frames()
        )));
    }
    let alignment = force_align(grid, transcript)?;
    let embeddings = extract_token_embeddings(hidden, &alignment, pooling)?;
    Ok((alignment, embeddings))
}
