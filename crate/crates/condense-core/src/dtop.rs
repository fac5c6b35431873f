//! Per-query candidate tables: for each training query, the documents the
//! teacher ranks highest, with their exact flat-search scores. These are
//! the distillation targets, and negatives are drawn from them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::eval::RunList;
use crate::index::FlatIndex;
use crate::linalg::seeded_rng;
use crate::qrels::Qrels;
use crate::store::EmbeddingStore;

pub const DEFAULT_N_TOP: usize = 100;

/// Map from query id to its top teacher documents, each list sorted by
/// descending score with ties broken by ascending doc id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopDocsTable {
    entries: BTreeMap<String, Vec<(String, f64)>>,
}

impl TopDocsTable {
    pub fn n_queries(&self) -> usize {
        self.entries.len()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn contains(&self, query_id: &str) -> bool {
        self.entries.contains_key(query_id)
    }

    /// Candidate list for a query: (doc id, teacher score) in rank order.
    pub fn get(&self, query_id: &str) -> Result<&[(String, f64)]> {
        self.entries
            .get(query_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingKey(query_id.to_string()))
    }

    /// Persist as a TREC run file (tag `dtop`). Scores survive the text
    /// round trip bit-exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut run = RunList::new("dtop");
        for (qid, docs) in &self.entries {
            run.set_ranking(qid, docs.clone())?;
        }
        run.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let run = RunList::load(path)?;
        let mut entries = BTreeMap::new();
        for qid in run.query_ids() {
            entries.insert(qid.to_string(), run.ranking(qid).unwrap().to_vec());
        }
        Ok(TopDocsTable { entries })
    }
}

/// Exhaustively score every query against the corpus and keep the top
/// `n_top` documents each (the whole corpus when it is smaller).
pub fn build_dtop(
    doc_store: &EmbeddingStore,
    query_store: &EmbeddingStore,
    n_top: usize,
) -> Result<TopDocsTable> {
    if n_top == 0 {
        return Err(Error::Config("n_top must be >= 1".into()));
    }
    if doc_store.dimension() != query_store.dimension() {
        return Err(Error::dimension(
            "dtop query dim",
            doc_store.dimension(),
            query_store.dimension(),
        ));
    }
    let index = FlatIndex::new(doc_store)?;
    let mut entries = BTreeMap::new();
    for (qid, qvec) in query_store.iter() {
        let rows = index.search_rows(qvec, n_top)?;
        let docs = rows
            .into_iter()
            .map(|(row, score)| (doc_store.id(row).to_string(), score))
            .collect();
        entries.insert(qid.to_string(), docs);
    }
    Ok(TopDocsTable { entries })
}

/// Uniformly draw up to `n` distinct doc ids from a query's candidate list
/// whose qrels grade is zero or absent. Fails only when no such candidate
/// exists.
pub fn sample_negatives(
    query_id: &str,
    qrels: &Qrels,
    dtop: &TopDocsTable,
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let candidates: Vec<&str> = dtop
        .get(query_id)?
        .iter()
        .map(|(did, _)| did.as_str())
        .filter(|did| qrels.grade(query_id, did) == 0)
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoNegative(query_id.to_string()));
    }
    let mut picks: Vec<&str> = candidates;
    let take = n.min(picks.len());
    let mut rng = seeded_rng(seed);
    for i in 0..take {
        let j = rng.gen_range(i..picks.len());
        picks.swap(i, j);
    }
    Ok(picks[..take].iter().map(|s| s.to_string()).collect())
}
