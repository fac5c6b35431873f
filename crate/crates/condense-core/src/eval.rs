//! Ranking metrics (MRR, NDCG, recall, hit rate) and TREC run-file I/O.
//!
//! All metrics read ranks, never raw scores, so any score transformation
//! that preserves order leaves every metric unchanged. Queries present in
//! the run but absent from the qrels are skipped and counted as warnings;
//! the evaluated set is the intersection of run and qrels queries.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::qrels::Qrels;

/// Ranked retrieval results per query. Entries are stored in rank order
/// (rank = position + 1) with non-increasing scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RunList {
    by_query: BTreeMap<String, Vec<(String, f64)>>,
    tag: String,
}

impl Default for RunList {
    fn default() -> Self {
        Self::new("condense")
    }
}

impl RunList {
    pub fn new(tag: impl Into<String>) -> Self {
        RunList {
            by_query: BTreeMap::new(),
            tag: tag.into(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Install the ranking for one query, replacing any previous one.
    /// Scores must be finite and non-increasing; doc ids must be unique.
    pub fn set_ranking(&mut self, query_id: &str, ranking: Vec<(String, f64)>) -> Result<()> {
        let mut prev = f64::INFINITY;
        for (doc_id, score) in &ranking {
            if !score.is_finite() {
                return Err(Error::format(format!(
                    "non-finite score for query '{query_id}', doc '{doc_id}'"
                )));
            }
            if *score > prev {
                return Err(Error::format(format!(
                    "scores increase with rank for query '{query_id}' at doc '{doc_id}'"
                )));
            }
            prev = *score;
        }
        let mut seen: Vec<&str> = ranking.iter().map(|(d, _)| d.as_str()).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::format(format!(
                "duplicate doc id in ranking for query '{query_id}'"
            )));
        }
        self.by_query.insert(query_id.to_string(), ranking);
        Ok(())
    }

    pub fn n_queries(&self) -> usize {
        self.by_query.len()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(|s| s.as_str())
    }

    /// Ranking for a query in rank order, or None if absent.
    pub fn ranking(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.by_query.get(query_id).map(|v| v.as_slice())
    }

    /// Write `qid Q0 docid rank score tag` lines, queries in sorted order.
    /// Scores use the shortest decimal form that parses back to the same
    /// f64, so a round trip is exact.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (qid, ranking) in &self.by_query {
            for (rank0, (did, score)) in ranking.iter().enumerate() {
                writeln!(w, "{qid} Q0 {did} {} {score} {}", rank0 + 1, self.tag)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parse a run file, validating field count, rank contiguity per query,
    /// and the score ordering invariant. The tag is taken from the first
    /// data line; an empty file yields an empty run.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut groups: BTreeMap<String, Vec<(String, f64, usize)>> = BTreeMap::new();
        let mut tag = String::from("condense");
        let mut saw_line = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::format_at(
                    format!("expected 6 fields, got {}", fields.len()),
                    lineno,
                ));
            }
            let rank: usize = fields[3].parse().map_err(|_| {
                Error::format_at(format!("bad rank '{}'", fields[3]), lineno)
            })?;
            let score: f64 = fields[4].parse().map_err(|_| {
                Error::format_at(format!("bad score '{}'", fields[4]), lineno)
            })?;
            if !saw_line {
                tag = fields[5].to_string();
                saw_line = true;
            }
            groups
                .entry(fields[0].to_string())
                .or_default()
                .push((fields[2].to_string(), score, rank));
        }
        let mut run = RunList::new(tag);
        for (qid, entries) in groups {
            for (i, (_, _, rank)) in entries.iter().enumerate() {
                if *rank != i + 1 {
                    return Err(Error::format(format!(
                        "ranks for query '{qid}' are not contiguous from 1 \
                         (expected {}, found {rank})",
                        i + 1
                    )));
                }
            }
            let ranking = entries.into_iter().map(|(d, s, _)| (d, s)).collect();
            run.set_ranking(&qid, ranking)?;
        }
        Ok(run)
    }
}

/// One metric over one run: the aggregate, per-query values in sorted query
/// order, and how many run queries were skipped for missing judgments.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub metric: String,
    pub aggregate: f64,
    pub per_query: Vec<(String, f64)>,
    pub n_evaluated: usize,
    pub n_skipped: usize,
}

impl MetricReport {
    fn from_values(metric: String, per_query: Vec<(String, f64)>, n_skipped: usize) -> Self {
        let n_evaluated = per_query.len();
        let aggregate = if n_evaluated == 0 {
            0.0
        } else {
            per_query.iter().map(|(_, v)| v).sum::<f64>() / n_evaluated as f64
        };
        MetricReport {
            metric,
            aggregate,
            per_query,
            n_evaluated,
            n_skipped,
        }
    }
}

/// Write `metric<TAB>value` summary lines for a batch of reports.
pub fn write_reports(reports: &[MetricReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in reports {
        writeln!(w, "{}\t{}", r.metric, r.aggregate)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `metric<TAB>query<TAB>value` lines for per-query inspection.
pub fn write_per_query(reports: &[MetricReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in reports {
        for (qid, v) in &r.per_query {
            writeln!(w, "{}\t{}\t{}", r.metric, qid, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("metric cutoff k must be >= 1".into()));
    }
    Ok(())
}

/// Queries evaluable against the qrels, plus the skipped-query count.
fn evaluated_queries<'a>(run: &'a RunList, qrels: &Qrels) -> Result<(Vec<&'a str>, usize)> {
    let mut kept = Vec::new();
    let mut skipped = 0usize;
    for qid in run.query_ids() {
        if qrels.contains_query(qid) {
            kept.push(qid);
        } else {
            skipped += 1;
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyInput(
            "no run query has judgments in the qrels",
        ));
    }
    Ok((kept, skipped))
}

/// Reciprocal rank of the first relevant doc within the top k, 0 if none.
/// Queries without any relevant doc stay in the mean and contribute 0.
pub fn mrr_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_k(k)?;
    let (queries, n_skipped) = evaluated_queries(run, qrels)?;
    let per_query = queries
        .into_iter()
        .map(|qid| {
            let ranking = run.ranking(qid).unwrap();
            let rr = ranking
                .iter()
                .take(k)
                .position(|(did, _)| qrels.grade(qid, did) >= 1)
                .map_or(0.0, |pos| 1.0 / (pos as f64 + 1.0));
            (qid.to_string(), rr)
        })
        .collect();
    Ok(MetricReport::from_values(
        format!("mrr@{k}"),
        per_query,
        n_skipped,
    ))
}

/// 1 if any relevant doc appears in the top k, else 0, averaged over
/// evaluated queries.
pub fn hit_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_k(k)?;
    let (queries, n_skipped) = evaluated_queries(run, qrels)?;
    let per_query = queries
        .into_iter()
        .map(|qid| {
            let ranking = run.ranking(qid).unwrap();
            let hit = ranking
                .iter()
                .take(k)
                .any(|(did, _)| qrels.grade(qid, did) >= 1);
            (qid.to_string(), if hit { 1.0 } else { 0.0 })
        })
        .collect();
    Ok(MetricReport::from_values(
        format!("hit@{k}"),
        per_query,
        n_skipped,
    ))
}

fn gain(grade: u32) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// NDCG@k with exponential gain 2^grade - 1 and log2(rank + 1) discount.
/// Queries with no relevant doc are excluded from the mean.
pub fn ndcg_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_k(k)?;
    let (queries, n_skipped) = evaluated_queries(run, qrels)?;
    let mut per_query = Vec::new();
    for qid in queries {
        if qrels.n_relevant(qid) == 0 {
            continue;
        }
        let ranking = run.ranking(qid).unwrap();
        let dcg: f64 = ranking
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, (did, _))| gain(qrels.grade(qid, did)) / discount(i + 1))
            .sum();
        let mut grades: Vec<u32> = qrels.judgments(qid).map(|(_, g)| g).collect();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i + 1))
            .sum();
        per_query.push((qid.to_string(), dcg / idcg));
    }
    Ok(MetricReport::from_values(
        format!("ndcg@{k}"),
        per_query,
        n_skipped,
    ))
}

/// Fraction of a query's relevant docs found in the top k, averaged over
/// queries with at least one relevant doc.
pub fn recall_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_k(k)?;
    let (queries, n_skipped) = evaluated_queries(run, qrels)?;
    let mut per_query = Vec::new();
    for qid in queries {
        let n_rel = qrels.n_relevant(qid);
        if n_rel == 0 {
            continue;
        }
        let ranking = run.ranking(qid).unwrap();
        let found = ranking
            .iter()
            .take(k)
            .filter(|(did, _)| qrels.grade(qid, did) >= 1)
            .count();
        per_query.push((qid.to_string(), found as f64 / n_rel as f64));
    }
    Ok(MetricReport::from_values(
        format!("recall@{k}"),
        per_query,
        n_skipped,
    ))
}
