//! Token-level retrieval-augmented prompting for speech recognition.
//!
//! Frame-level encoder states are force-aligned to their transcripts with
//! CTC, pooled into one vector per token and stored in a kNN datastore.
//! At query time the tokens where an N-best list disagrees are looked up,
//! neighbours are grouped back into their source utterances, and the best
//! utterances become in-context examples in a speech/text prompt.

pub mod alignment;
pub mod datastore;
pub mod edit;
pub mod error;
pub mod evaluation;
pub mod manifest;
pub mod prompt;
pub mod retrieval;
pub mod tensor;
pub mod vector_index;

pub use alignment::{
    force_align, LogPosteriorGrid, Pooling, TokenAlignment, TokenSpan, Transcript,
};
pub use datastore::{CorpusItem, Datastore, DatastoreBuilder, SequenceRecord, SkipReport};
pub use error::{Error, Result};
pub use prompt::{assemble_prompt, AdapterWeights, PromptLayout, PromptSegment};
pub use retrieval::{
    align_nbest, prune_query, retrieve, ExampleCandidate, NBestList, RetrieveParams,
};
pub use tensor::Matrix;
pub use vector_index::{ExactIndex, Index, IvfIndex, IvfParams, Neighbor, NeighborSearch};
