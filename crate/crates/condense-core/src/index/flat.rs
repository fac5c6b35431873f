//! Exact top-k search by exhaustive dot-product scan.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::index::{Hit, SearchResult, Searcher};
use crate::linalg::dot_unchecked;
use crate::store::EmbeddingStore;

/// A thin view over an embedding store that scores every document. Exact
/// by construction; the reference against which HNSW recall is measured.
#[derive(Debug, Clone, Copy)]
pub struct FlatIndex<'a> {
    store: &'a EmbeddingStore,
}

impl<'a> FlatIndex<'a> {
    pub fn new(store: &'a EmbeddingStore) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyInput("flat index over an empty store"));
        }
        Ok(FlatIndex { store })
    }

    pub fn store(&self) -> &'a EmbeddingStore {
        self.store
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<()> {
        if query.len() != self.store.dimension() {
            return Err(Error::dimension(
                "flat search query",
                self.store.dimension(),
                query.len(),
            ));
        }
        if k == 0 {
            return Err(Error::Config("search k must be >= 1".into()));
        }
        Ok(())
    }

    /// The exact k best rows as (row index, score), descending score with
    /// ties broken by ascending doc id.
    pub fn search_rows(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        self.check_query(query, k)?;
        let store = self.store;
        let mut scored: Vec<(usize, f64)> = (0..store.len())
            .map(|row| (row, dot_unchecked(query, store.row(row))))
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| store.id(a.0).cmp(store.id(b.0)))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored)
    }
}

impl Searcher for FlatIndex<'_> {
    fn search(&self, query: &[f64], k: usize) -> Result<SearchResult> {
        let rows = self.search_rows(query, k)?;
        Ok(rows
            .into_iter()
            .map(|(row, score)| Hit {
                doc_id: self.store.id(row).to_string(),
                score,
            })
            .collect())
    }
}
