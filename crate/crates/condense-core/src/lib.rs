//! Dense-retrieval embedding compression: linear compressors distilled
//! from a frozen teacher, exact and approximate inner-product search over
//! the compressed vectors, and the IR measurement kit to compare them.
//!
//! The pipeline the pieces form:
//!
//! 1. [`synth`] generates a teacher corpus with known structure (or load
//!    real embeddings through [`store`]).
//! 2. [`dtop`] records the teacher's top candidates per training query.
//! 3. [`train`] fits the conditional autoencoder or the contrastive
//!    baseline on those lists; [`pca`] is the training-free baseline.
//! 4. [`compress`] applies a fitted model to whole stores.
//! 5. [`index`] searches flat or through a small-world graph.
//! 6. [`eval`] scores run files against qrels; [`latency`] times search.
//!
//! Everything is deterministic under a fixed seed, including training
//! and graph construction.

pub mod compress;
pub mod dtop;
pub mod error;
pub mod eval;
pub mod index;
pub mod latency;
pub mod linalg;
pub mod pca;
pub mod qrels;
pub mod store;
pub mod synth;
pub mod train;

pub use compress::{CompressorModel, Side};
pub use error::{Error, Result};
pub use eval::{MetricReport, RunList};
pub use index::{FlatIndex, Hit, HnswIndex, HnswParams, HnswSearcher, SearchResult, Searcher};
pub use latency::{bench_latency, LatencyReport};
pub use linalg::DenseMatrix;
pub use qrels::Qrels;
pub use store::EmbeddingStore;
pub use synth::{SynthConfig, SynthData};
pub use train::{Ablation, LossBreakdown, TrainConfig};
