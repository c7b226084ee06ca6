//! Layer-wise analysis of how LLM whole-word representations relate to
//! compositions of their subword representations.
//!
//! The pipeline builds a parallel word/subword dataset ([`lexicon`]), reads
//! per-layer vectors from on-disk stores ([`store`]), composes subword
//! vectors ([`compose`]), aligns composed and whole-word spaces with an
//! orthogonal map ([`procrustes`]) scored by cosine retrieval
//! ([`retrieval`]), probes word type and length ([`probes`]), and
//! aggregates everything into layer curves ([`experiment`], [`report`]).

pub mod compose;
pub mod error;
pub mod experiment;
pub mod lexicon;
pub mod probes;
pub mod procrustes;
pub mod report;
pub mod retrieval;
pub mod store;
pub mod synthetic;

pub use compose::{compose, compose_batch, compose_contextual, CompositionOp};
pub use error::{Error, Result};
pub use experiment::{
    compare_variants, run_geometry, run_probe, CategoryFilter, CompareConfig, CurveSet, ExperimentConfig,
    LayerCurve, LayerPoint, Mode, ModelSpec, RetrievalPool, Task,
};
pub use lexicon::{
    build_dataset, enumerate_splits, parse_lexicon, pick_split_per_run, Category, DatasetSplit, LexiconEntry,
    RawLexiconRecord, VocabFile,
};
pub use procrustes::ProcrustesMap;
pub use retrieval::{precision_at_k, RetrievalResult};
pub use store::{validate_store, write_store, EmbeddingStore, ItemKey, LayerMatrix, StoreKind, StoreManifest};
