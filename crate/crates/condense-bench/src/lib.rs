//! Deterministic fixtures for the criterion benches. Timing runs want
//! stores that are cheap to build and statistically bland, so these are
//! plain gaussian matrices rather than the clustered experiment corpora.

use condense_core::linalg::{derive_seed, fill_gaussian, seeded_rng, DenseMatrix};
use condense_core::EmbeddingStore;

/// A store of `n` standard-gaussian rows in `dim` dimensions, ids
/// `{prefix}0, {prefix}1, ...`.
pub fn random_store(n: usize, dim: usize, seed: u64, prefix: &str) -> EmbeddingStore {
    let mut rng = seeded_rng(seed);
    let mut data = vec![0.0; n * dim];
    fill_gaussian(&mut rng, &mut data);
    let matrix = DenseMatrix::from_vec(n, dim, data).expect("gaussian draws are finite");
    let ids = (0..n).map(|i| format!("{prefix}{i}")).collect();
    EmbeddingStore::new(ids, matrix).expect("one id per row")
}

/// Paired document and query stores drawn from independent streams of the
/// same seed.
pub fn corpus_and_queries(
    n_docs: usize,
    n_queries: usize,
    dim: usize,
    seed: u64,
) -> (EmbeddingStore, EmbeddingStore) {
    let docs = random_store(n_docs, dim, derive_seed(seed, 0), "d");
    let queries = random_store(n_queries, dim, derive_seed(seed, 1), "q");
    (docs, queries)
}
