//! Relevance judgments in TREC qrels format.
//!
//! A qrels line is `query_id iteration doc_id grade`, whitespace separated.
//! The iteration column is carried through unchanged but otherwise ignored.
//! Grades are non-negative integers; grade 0 means judged non-relevant.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Judged (query, doc) grades. Queries and docs iterate in sorted id order
/// so downstream output is stable.
#[derive(Debug, Clone, Default)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a judgment. A repeated (query, doc) pair overwrites the
    /// earlier grade, matching the usual last-wins file semantics.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.by_query
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn n_queries(&self) -> usize {
        self.by_query.len()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(|s| s.as_str())
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.by_query.contains_key(query_id)
    }

    /// Grade for a pair; 0 when the pair is unjudged.
    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.by_query
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// Judged docs for a query in sorted doc-id order, empty if unknown.
    pub fn judgments(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.by_query
            .get(query_id)
            .into_iter()
            .flat_map(|docs| docs.iter().map(|(d, g)| (d.as_str(), *g)))
    }

    /// Ids of docs with grade > 0 for a query.
    pub fn relevant_docs(&self, query_id: &str) -> Vec<&str> {
        self.judgments(query_id)
            .filter(|(_, g)| *g > 0)
            .map(|(d, _)| d)
            .collect()
    }

    /// Number of docs with grade > 0 for a query.
    pub fn n_relevant(&self, query_id: &str) -> usize {
        self.judgments(query_id).filter(|(_, g)| *g > 0).count()
    }

    /// Parse a qrels file. Blank lines are skipped; any other malformed
    /// line is an error that names its 1-based line number.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut qrels = Qrels::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::format_at(
                    format!("expected 4 fields, got {}", fields.len()),
                    lineno,
                ));
            }
            let grade: u32 = fields[3].parse().map_err(|_| {
                Error::format_at(format!("bad grade '{}'", fields[3]), lineno)
            })?;
            qrels.insert(fields[0], fields[2], grade);
        }
        Ok(qrels)
    }

    /// Write in `query_id 0 doc_id grade` form, sorted by query then doc.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (qid, docs) in &self.by_query {
            for (did, grade) in docs {
                writeln!(w, "{qid} 0 {did} {grade}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
