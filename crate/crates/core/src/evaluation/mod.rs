//! CER scoring, synthetic corpora and the retrieval benchmark.

pub mod bench;
pub mod cer;
pub mod synth;

pub use bench::{
    benchmark_retrieval, run_synthetic_benchmark, BenchConfig, BenchReport, BenchRow, Strategy,
};
pub use cer::{cer, cer_chars, CerOptions, CerReport};
pub use synth::{
    synth_corpus, write_toy_ctc_corpus, SynthCorpus, SynthCorpusParams, SynthQuery, TruthRecord,
};
