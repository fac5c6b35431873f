//! Hierarchical navigable small world graph for approximate top-k search
//! under inner-product scoring. Distance is the negated dot product, used
//! directly without any Euclidean reduction.
//!
//! The index holds only the graph; searches take the embedding store the
//! graph was built over. Construction is single-threaded and fully
//! determined by the seed.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::index::{Hit, SearchResult, Searcher};
use crate::linalg::{dot_unchecked, seeded_rng};
use crate::store::EmbeddingStore;

pub const HNSW_MAGIC: &[u8; 8] = b"DCHNS1\0\0";
pub const HNSW_VERSION: u32 = 1;
pub const DEFAULT_M: usize = 16;
pub const DEFAULT_EF_CONSTRUCTION: usize = 200;
pub const DEFAULT_EF_SEARCH: usize = 128;

#[derive(Debug, Clone, Copy)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: DEFAULT_M,
            ef_construction: DEFAULT_EF_CONSTRUCTION,
            seed: 0,
        }
    }
}

/// Layered proximity graph. `neighbors[node][layer]` lists the node ids
/// adjacent to `node` on that layer; every node has a layer-0 list.
#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    m: usize,
    ef_construction: usize,
    dim: usize,
    entry_point: u32,
    max_layer: usize,
    neighbors: Vec<Vec<Vec<u32>>>,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    id: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.id.cmp(&other.id))
    }
}

/// Generation-stamped visited set, reused across layer searches to avoid
/// reallocating a bitmap per call.
struct Visited {
    stamp: Vec<u32>,
    generation: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            stamp: vec![0; n],
            generation: 0,
        }
    }

    fn next_generation(&mut self) {
        if self.generation == u32::MAX {
            self.stamp.fill(0);
            self.generation = 0;
        }
        self.generation += 1;
    }

    fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.stamp[id as usize];
        if *slot == self.generation {
            false
        } else {
            *slot = self.generation;
            true
        }
    }
}

fn neg_dot(a: &[f64], b: &[f64]) -> f64 {
    -dot_unchecked(a, b)
}

impl HnswIndex {
    /// Insert every store row into a fresh graph. Layer assignment draws
    /// floor(-ln(U) / ln M) per node from a seeded generator.
    pub fn build(store: &EmbeddingStore, params: &HnswParams) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyInput("hnsw build over an empty store"));
        }
        if params.m < 2 {
            return Err(Error::Config(format!("hnsw m must be >= 2, got {}", params.m)));
        }
        if params.ef_construction < 1 {
            return Err(Error::Config("hnsw ef_construction must be >= 1".into()));
        }
        if store.len() > u32::MAX as usize {
            return Err(Error::Config("hnsw supports at most 2^32 - 1 nodes".into()));
        }
        let mut rng = seeded_rng(params.seed);
        let inv_ln_m = 1.0 / (params.m as f64).ln();
        let mut index = HnswIndex {
            m: params.m,
            ef_construction: params.ef_construction,
            dim: store.dimension(),
            entry_point: 0,
            max_layer: 0,
            neighbors: Vec::with_capacity(store.len()),
        };
        let mut visited = Visited::new(store.len());
        for node in 0..store.len() {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let level = (-u.ln() * inv_ln_m).floor() as usize;
            index.neighbors.push(vec![Vec::new(); level + 1]);
            if node == 0 {
                index.max_layer = level;
                continue;
            }
            index.insert_node(store, node as u32, level, &mut visited);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ef_construction(&self) -> usize {
        self.ef_construction
    }

    fn insert_node(&mut self, store: &EmbeddingStore, node: u32, level: usize, visited: &mut Visited) {
        let q = store.row(node as usize);
        let ep = self.entry_point;
        let mut entry = vec![Candidate {
            dist: neg_dot(q, store.row(ep as usize)),
            id: ep,
        }];
        let mut layer = self.max_layer;
        while layer > level {
            entry = self.search_layer(store, q, &entry, 1, layer, visited);
            layer -= 1;
        }
        for lc in (0..=level.min(self.max_layer)).rev() {
            let found = self.search_layer(store, q, &entry, self.ef_construction, lc, visited);
            let selected = self.select_heuristic(store, &found, self.m);
            for &nb in &selected {
                self.neighbors[node as usize][lc].push(nb);
                self.neighbors[nb as usize][lc].push(node);
                let cap = if lc == 0 { 2 * self.m } else { self.m };
                if self.neighbors[nb as usize][lc].len() > cap {
                    self.prune(store, nb, lc, cap);
                }
            }
            entry = found;
        }
        if level > self.max_layer {
            self.max_layer = level;
            self.entry_point = node;
        }
    }

    /// Re-select an over-full neighbor list down to `cap` using the same
    /// diversity heuristic, measured from the owning node.
    fn prune(&mut self, store: &EmbeddingStore, node: u32, layer: usize, cap: usize) {
        let v = store.row(node as usize);
        let mut cands: Vec<Candidate> = self.neighbors[node as usize][layer]
            .iter()
            .map(|&x| Candidate {
                dist: neg_dot(v, store.row(x as usize)),
                id: x,
            })
            .collect();
        cands.sort_unstable();
        self.neighbors[node as usize][layer] = self.select_heuristic(store, &cands, cap);
    }

    /// Best-first beam search on one layer. Entries and the returned list
    /// are sorted by ascending distance; the beam keeps the `ef` closest.
    fn search_layer(
        &self,
        store: &EmbeddingStore,
        q: &[f64],
        entries: &[Candidate],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<Candidate> {
        visited.next_generation();
        let mut queue: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
        let mut found: BinaryHeap<Candidate> = BinaryHeap::new();
        for &c in entries {
            if visited.insert(c.id) {
                queue.push(Reverse(c));
                found.push(c);
            }
        }
        while found.len() > ef {
            found.pop();
        }
        while let Some(Reverse(current)) = queue.pop() {
            let worst = found.peek().map_or(f64::INFINITY, |w| w.dist);
            if current.dist > worst && found.len() >= ef {
                break;
            }
            for &nb in &self.neighbors[current.id as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Candidate {
                    dist: neg_dot(q, store.row(nb as usize)),
                    id: nb,
                };
                let worst = found.peek().map_or(f64::INFINITY, |w| w.dist);
                if found.len() < ef || cand.dist < worst {
                    queue.push(Reverse(cand));
                    found.push(cand);
                    if found.len() > ef {
                        found.pop();
                    }
                }
            }
        }
        found.into_sorted_vec()
    }

    /// Diversity-aware neighbor selection: walk candidates by ascending
    /// distance and keep one only if it is closer to the query point than
    /// to every already-kept neighbor.
    fn select_heuristic(
        &self,
        store: &EmbeddingStore,
        sorted_candidates: &[Candidate],
        m: usize,
    ) -> Vec<u32> {
        let mut selected: Vec<u32> = Vec::with_capacity(m);
        for c in sorted_candidates {
            if selected.len() >= m {
                break;
            }
            let cv = store.row(c.id as usize);
            let dominated = selected
                .iter()
                .any(|&s| neg_dot(cv, store.row(s as usize)) < c.dist);
            if !dominated {
                selected.push(c.id);
            }
        }
        selected
    }

    fn check_store(&self, store: &EmbeddingStore) -> Result<()> {
        if store.len() != self.len() {
            return Err(Error::dimension("hnsw store rows", self.len(), store.len()));
        }
        if store.dimension() != self.dim {
            return Err(Error::dimension("hnsw store dim", self.dim, store.dimension()));
        }
        Ok(())
    }

    /// Approximate top-k. Returned scores are exact dot products. `ef`
    /// must be at least `k`.
    pub fn search(
        &self,
        store: &EmbeddingStore,
        query: &[f64],
        k: usize,
        ef: usize,
    ) -> Result<SearchResult> {
        self.check_store(store)?;
        if query.len() != self.dim {
            return Err(Error::dimension("hnsw query", self.dim, query.len()));
        }
        if k == 0 {
            return Err(Error::Config("search k must be >= 1".into()));
        }
        if ef < k {
            return Err(Error::Config(format!("ef_search {ef} is below k {k}")));
        }
        let mut visited = Visited::new(self.len());
        let ep = self.entry_point;
        let mut entry = vec![Candidate {
            dist: neg_dot(query, store.row(ep as usize)),
            id: ep,
        }];
        for layer in (1..=self.max_layer).rev() {
            entry = self.search_layer(store, query, &entry, 1, layer, &mut visited);
        }
        let mut found = self.search_layer(store, query, &entry, ef, 0, &mut visited);
        found.truncate(k);
        let mut hits: Vec<Hit> = found
            .into_iter()
            .map(|c| Hit {
                doc_id: store.id(c.id as usize).to_string(),
                score: -c.dist,
            })
            .collect();
        hits.sort_unstable_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        Ok(hits)
    }

    /// Structural invariant check: valid ids everywhere, a layer-0 list on
    /// every node, capped list lengths, no self-loops, and an entry point
    /// whose top layer matches the graph's.
    pub fn validate(&self) -> Result<()> {
        let n = self.len() as u32;
        if n == 0 {
            return Err(Error::EmptyInput("hnsw graph has no nodes"));
        }
        if self.entry_point >= n {
            return Err(Error::format("hnsw entry point out of range"));
        }
        if self.neighbors[self.entry_point as usize].len() != self.max_layer + 1 {
            return Err(Error::format("hnsw entry point level mismatch"));
        }
        for (node, layers) in self.neighbors.iter().enumerate() {
            if layers.is_empty() {
                return Err(Error::format(format!("node {node} missing layer 0")));
            }
            if layers.len() > self.max_layer + 1 {
                return Err(Error::format(format!("node {node} above the top layer")));
            }
            for (layer, list) in layers.iter().enumerate() {
                let cap = if layer == 0 { 2 * self.m } else { self.m };
                if list.len() > cap {
                    return Err(Error::format(format!(
                        "node {node} layer {layer} holds {} neighbors, cap {cap}",
                        list.len()
                    )));
                }
                for &nb in list {
                    if nb >= n {
                        return Err(Error::format(format!(
                            "node {node} layer {layer} links to missing node {nb}"
                        )));
                    }
                    if nb == node as u32 {
                        return Err(Error::format(format!("node {node} links to itself")));
                    }
                    if self.neighbors[nb as usize].len() <= layer {
                        return Err(Error::format(format!(
                            "node {node} links to {nb} above its top layer"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(HNSW_MAGIC)?;
        w.write_all(&HNSW_VERSION.to_le_bytes())?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        w.write_all(&(self.ef_construction as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.entry_point.to_le_bytes())?;
        w.write_all(&(self.max_layer as u32).to_le_bytes())?;
        for layers in &self.neighbors {
            w.write_all(&(layers.len() as u32).to_le_bytes())?;
            for list in layers {
                w.write_all(&(list.len() as u32).to_le_bytes())?;
                for nb in list {
                    w.write_all(&nb.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != HNSW_MAGIC {
            return Err(Error::format("bad magic: not an hnsw index file"));
        }
        let version = read_u32(&mut r, "version")?;
        if version != HNSW_VERSION {
            return Err(Error::format(format!("unsupported hnsw version {version}")));
        }
        let m = read_u32(&mut r, "m")? as usize;
        let ef_construction = read_u32(&mut r, "ef_construction")? as usize;
        let dim = read_u32(&mut r, "dim")? as usize;
        let n = read_u64(&mut r, "node count")? as usize;
        let entry_point = read_u32(&mut r, "entry point")?;
        let max_layer = read_u32(&mut r, "max layer")? as usize;
        let mut neighbors = Vec::with_capacity(n);
        for node in 0..n {
            let n_layers = read_u32(&mut r, "layer count")? as usize;
            if n_layers == 0 || n_layers > max_layer + 1 {
                return Err(Error::format(format!(
                    "node {node} has invalid layer count {n_layers}"
                )));
            }
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let count = read_u32(&mut r, "neighbor count")? as usize;
                if count > n {
                    return Err(Error::format("neighbor count exceeds node count"));
                }
                let mut list = Vec::with_capacity(count);
                for _ in 0..count {
                    list.push(read_u32(&mut r, "neighbor id")?);
                }
                layers.push(list);
            }
            neighbors.push(layers);
        }
        let index = HnswIndex {
            m,
            ef_construction,
            dim,
            entry_point,
            max_layer,
            neighbors,
        };
        index.validate()?;
        Ok(index)
    }
}

/// An index paired with its store and a beam width, satisfying the common
/// search interface. The beam is widened to `k` when a caller asks for
/// more results than the configured `ef_search`.
#[derive(Clone, Copy)]
pub struct HnswSearcher<'a> {
    pub index: &'a HnswIndex,
    pub store: &'a EmbeddingStore,
    pub ef_search: usize,
}

impl Searcher for HnswSearcher<'_> {
    fn search(&self, query: &[f64], k: usize) -> Result<SearchResult> {
        self.index
            .search(self.store, query, k, self.ef_search.max(k))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(format!("truncated hnsw file while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}
