//! Wall-clock search benchmarking.
//!
//! Per-query timing over a fixed repetition count, with an unmeasured
//! warmup pass and a black-box sink so the compiler cannot elide the
//! searches. The measured loop is strictly single-threaded; distributing
//! queries would change what "per-query latency" means.

use std::hint::black_box;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::index::Searcher;
use crate::store::EmbeddingStore;

#[derive(Debug, Clone)]
pub struct LatencyReport {
    /// One entry per (repetition, query), in milliseconds.
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub warmup: usize,
    pub reps: usize,
}

impl LatencyReport {
    fn from_samples(samples_ms: Vec<f64>, warmup: usize, reps: usize) -> Self {
        let mean_ms = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        LatencyReport {
            p50_ms: nearest_rank(&sorted, 0.50),
            p95_ms: nearest_rank(&sorted, 0.95),
            samples_ms,
            mean_ms,
            warmup,
            reps,
        }
    }
}

/// Nearest-rank percentile over an ascending-sorted slice.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Time `k`-nearest search for every query, `reps` times each, after
/// `warmup` unmeasured searches that cycle through the query set.
pub fn bench_latency<S: Searcher + ?Sized>(
    searcher: &S,
    queries: &EmbeddingStore,
    k: usize,
    warmup: usize,
    reps: usize,
) -> Result<LatencyReport> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("latency benchmark queries"));
    }
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let n = queries.len();
    let mut sink = 0.0f64;
    for i in 0..warmup {
        let hits = searcher.search(queries.row(i % n), k)?;
        sink += hits.first().map_or(0.0, |h| h.score);
    }
    let mut samples_ms = Vec::with_capacity(reps * n);
    for _ in 0..reps {
        for row in 0..n {
            let query = queries.row(row);
            let start = Instant::now();
            let hits = searcher.search(black_box(query), k)?;
            let elapsed = start.elapsed();
            sink += hits.first().map_or(0.0, |h| h.score);
            samples_ms.push(elapsed.as_secs_f64() * 1e3);
        }
    }
    black_box(sink);
    Ok(LatencyReport::from_samples(samples_ms, warmup, reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::FlatIndex;
    use crate::linalg::{fill_gaussian, seeded_rng, DenseMatrix};

    fn random_store(prefix: &str, rows: usize, cols: usize, seed: u64) -> EmbeddingStore {
        let mut rng = seeded_rng(seed);
        let mut data = vec![0.0; rows * cols];
        fill_gaussian(&mut rng, &mut data);
        EmbeddingStore::new(
            (0..rows).map(|i| format!("{prefix}{i:05}")).collect(),
            DenseMatrix::from_vec(rows, cols, data).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn report_shape_and_mean_consistency() {
        let docs = random_store("d", 200, 8, 1);
        let queries = random_store("q", 7, 8, 2);
        let index = FlatIndex::new(&docs).unwrap();
        let report = bench_latency(&index, &queries, 5, 3, 4).unwrap();
        assert_eq!(report.samples_ms.len(), 4 * 7);
        assert_eq!(report.warmup, 3);
        assert_eq!(report.reps, 4);
        let mean = report.samples_ms.iter().sum::<f64>() / report.samples_ms.len() as f64;
        assert!((report.mean_ms - mean).abs() < 1e-9);
        assert!(report.samples_ms.iter().all(|&s| s >= 0.0 && s.is_finite()));
        assert!(report.p50_ms <= report.p95_ms);
    }

    #[test]
    fn percentiles_come_from_the_samples() {
        let report = LatencyReport::from_samples(vec![4.0, 1.0, 3.0, 2.0], 0, 1);
        assert_eq!(report.p50_ms, 2.0);
        assert_eq!(report.p95_ms, 4.0);
        let single = LatencyReport::from_samples(vec![7.0], 0, 1);
        assert_eq!(single.p50_ms, 7.0);
        assert_eq!(single.p95_ms, 7.0);
    }

    #[test]
    fn larger_corpus_is_slower_to_scan() {
        let small = random_store("d", 500, 16, 3);
        let large = random_store("d", 25_000, 16, 4);
        let queries = random_store("q", 5, 16, 5);
        let t_small =
            bench_latency(&FlatIndex::new(&small).unwrap(), &queries, 10, 5, 6).unwrap();
        let t_large =
            bench_latency(&FlatIndex::new(&large).unwrap(), &queries, 10, 5, 6).unwrap();
        assert!(
            t_large.mean_ms > t_small.mean_ms,
            "50x corpus not slower: {} vs {}",
            t_large.mean_ms,
            t_small.mean_ms
        );
    }

    #[test]
    fn bad_inputs_rejected() {
        let docs = random_store("d", 10, 4, 6);
        let queries = random_store("q", 2, 4, 7);
        let empty_queries = EmbeddingStore::new(vec![], DenseMatrix::zeros(0, 4)).unwrap();
        let index = FlatIndex::new(&docs).unwrap();
        assert!(matches!(
            bench_latency(&index, &empty_queries, 5, 0, 1),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            bench_latency(&index, &queries, 5, 0, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            bench_latency(&index, &queries, 0, 0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn works_through_a_trait_object() {
        let docs = random_store("d", 50, 4, 8);
        let queries = random_store("q", 2, 4, 9);
        let index = FlatIndex::new(&docs).unwrap();
        let dyn_searcher: &dyn Searcher = &index;
        let report = bench_latency(dyn_searcher, &queries, 3, 1, 2).unwrap();
        assert_eq!(report.samples_ms.len(), 4);
    }
}
