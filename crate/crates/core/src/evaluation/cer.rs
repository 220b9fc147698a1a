use serde::Serialize;

use crate::edit;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CerOptions {
    /// Drop whitespace from both sides before scoring.
    pub strip_whitespace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CerReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_length: usize,
    pub cer: f64,
}

impl CerReport {
    fn from_counts(s: usize, i: usize, d: usize, ref_length: usize) -> Self {
        Self {
            substitutions: s,
            insertions: i,
            deletions: d,
            ref_length,
            cer: (s + i + d) as f64 / ref_length as f64,
        }
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Corpus-level report: error and length totals, not a mean of rates.
    pub fn total(reports: &[CerReport]) -> Result<Self> {
        let (s, i, d, n) = reports.iter().fold((0, 0, 0, 0), |acc, r| {
            (
                acc.0 + r.substitutions,
                acc.1 + r.insertions,
                acc.2 + r.deletions,
                acc.3 + r.ref_length,
            )
        });
        if n == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(Self::from_counts(s, i, d, n))
    }
}

/// Character error rate over Unicode scalar values.
pub fn cer_chars(hypothesis: &[char], reference: &[char]) -> Result<CerReport> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let c = edit::counts(&edit::align(reference, hypothesis));
    Ok(CerReport::from_counts(
        c.substitutions,
        c.insertions,
        c.deletions,
        reference.len(),
    ))
}

pub fn cer(hypothesis: &str, reference: &str, opts: CerOptions) -> Result<CerReport> {
    let chars = |s: &str| -> Vec<char> {
        s.chars()
            .filter(|c| !(opts.strip_whitespace && c.is_whitespace()))
            .collect()
    };
    cer_chars(&chars(hypothesis), &chars(reference))
}
