//! Top-k maximum-inner-product retrieval: exact exhaustive scan and an
//! approximate HNSW graph.

mod flat;
mod hnsw;

pub use flat::FlatIndex;
pub use hnsw::{HnswIndex, HnswParams, HnswSearcher, DEFAULT_EF_CONSTRUCTION,
    DEFAULT_EF_SEARCH, DEFAULT_M, HNSW_MAGIC};

use crate::error::Result;

/// One retrieved document with its exact dot-product score.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Hits ordered by descending score, ties by ascending doc id.
pub type SearchResult = Vec<Hit>;

/// Common query interface over flat and HNSW backends, mainly so the
/// latency harness and CLI can treat them uniformly.
pub trait Searcher {
    fn search(&self, query: &[f64], k: usize) -> Result<SearchResult>;
}
