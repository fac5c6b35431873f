//! Synthetic teacher corpora: clustered low-dimensional structure lifted
//! into a high-dimensional ambient space.
//!
//! Documents and queries are drawn around shared cluster centers in an
//! `intrinsic_dim`-dimensional latent space, so retrieval quality is high
//! by construction, then embedded into `ambient_dim` dimensions through an
//! orthonormal map (which preserves every dot product) plus a small
//! ambient noise floor. The result behaves like teacher embeddings whose
//! information content lives on a low-dimensional subspace.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{derive_seed, fill_gaussian, random_orthonormal, seeded_rng, DenseMatrix};
use crate::qrels::Qrels;
use crate::store::EmbeddingStore;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Latent dimensionality m: the data's true degrees of freedom.
    pub intrinsic_dim: usize,
    /// Ambient dimensionality K of the emitted embeddings.
    pub ambient_dim: usize,
    pub n_clusters: usize,
    pub n_docs: usize,
    pub n_train_queries: usize,
    pub n_test_queries: usize,
    /// Same-cluster docs marked relevant (grade 1) per query.
    pub relevant_per_query: usize,
    /// Gaussian noise scale around each cluster center, latent space.
    pub cluster_spread: f64,
    /// Gaussian noise scale added in all ambient dims after lifting.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            intrinsic_dim: 32,
            ambient_dim: 256,
            n_clusters: 64,
            n_docs: 50_000,
            n_train_queries: 2_000,
            n_test_queries: 500,
            relevant_per_query: 1,
            cluster_spread: 0.05,
            noise_floor: 0.0005,
            seed: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intrinsic_dim == 0 || self.ambient_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.intrinsic_dim > self.ambient_dim {
            return Err(Error::Config(format!(
                "intrinsic_dim {} exceeds ambient_dim {}",
                self.intrinsic_dim, self.ambient_dim
            )));
        }
        if self.n_clusters < 2 {
            return Err(Error::Config("n_clusters must be at least 2".into()));
        }
        if self.relevant_per_query == 0 {
            return Err(Error::Config("relevant_per_query must be at least 1".into()));
        }
        if self.n_docs == 0 {
            return Err(Error::Config("n_docs must be positive".into()));
        }
        let min_cluster = self.n_docs / self.n_clusters;
        if min_cluster < self.relevant_per_query {
            return Err(Error::Config(format!(
                "smallest cluster holds {} docs, fewer than relevant_per_query {}",
                min_cluster, self.relevant_per_query
            )));
        }
        if self.cluster_spread < 0.0 || self.noise_floor < 0.0 {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything one experiment needs: corpus, query split, judgments.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub docs: EmbeddingStore,
    pub train_queries: EmbeddingStore,
    pub test_queries: EmbeddingStore,
    pub qrels: Qrels,
}

/// Latent points around round-robin cluster centers: row i belongs to
/// cluster i mod n_clusters.
fn latent_points(
    centers: &DenseMatrix,
    n: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> DenseMatrix {
    let m = centers.cols();
    let n_clusters = centers.rows();
    let mut data = vec![0.0; n * m];
    let mut noise = vec![0.0; m];
    for i in 0..n {
        let center = centers.row(i % n_clusters);
        fill_gaussian(rng, &mut noise);
        for j in 0..m {
            data[i * m + j] = center[j] + spread * noise[j];
        }
    }
    DenseMatrix::from_vec(n, m, data).expect("finite by construction")
}

/// Lift latent rows through the orthonormal map and add the ambient noise
/// floor in every output dimension.
fn lift(
    latent: &DenseMatrix,
    basis: &DenseMatrix,
    noise_floor: f64,
    rng: &mut ChaCha8Rng,
) -> DenseMatrix {
    let n = latent.rows();
    let k = basis.rows();
    let mut data = vec![0.0; n * k];
    let mut noise = vec![0.0; k];
    for i in 0..n {
        let lifted = basis.mat_vec(latent.row(i)).expect("dims fixed above");
        fill_gaussian(rng, &mut noise);
        for j in 0..k {
            data[i * k + j] = lifted[j] + noise_floor * noise[j];
        }
    }
    DenseMatrix::from_vec(n, k, data).expect("finite by construction")
}

fn make_store(prefix: &str, matrix: DenseMatrix) -> EmbeddingStore {
    let ids = (0..matrix.rows()).map(|i| format!("{prefix}{i:06}")).collect();
    EmbeddingStore::new(ids, matrix).expect("ids unique by construction")
}

/// Generate a synthetic teacher dataset. Deterministic: every random
/// stream is derived from `config.seed` alone.
pub fn synth_teacher(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let m = config.intrinsic_dim;
    let k = config.ambient_dim;

    let mut centers_rng = seeded_rng(derive_seed(config.seed, 0));
    let mut centers_data = vec![0.0; config.n_clusters * m];
    fill_gaussian(&mut centers_rng, &mut centers_data);
    let centers = DenseMatrix::from_vec(config.n_clusters, m, centers_data)?;

    let mut doc_rng = seeded_rng(derive_seed(config.seed, 1));
    let docs_latent = latent_points(&centers, config.n_docs, config.cluster_spread, &mut doc_rng);
    let mut train_rng = seeded_rng(derive_seed(config.seed, 2));
    let train_latent = latent_points(
        &centers,
        config.n_train_queries,
        config.cluster_spread,
        &mut train_rng,
    );
    let mut test_rng = seeded_rng(derive_seed(config.seed, 3));
    let test_latent = latent_points(
        &centers,
        config.n_test_queries,
        config.cluster_spread,
        &mut test_rng,
    );

    // Per-cluster doc row lists for relevance marking.
    let mut cluster_docs: Vec<Vec<usize>> = vec![Vec::new(); config.n_clusters];
    for i in 0..config.n_docs {
        cluster_docs[i % config.n_clusters].push(i);
    }

    // A query's relevant docs are the same-cluster docs with the highest
    // latent dot products. Retrieval scores are these dot products up to
    // the ambient noise floor, which keeps teacher MRR high.
    let mut qrels = Qrels::new();
    let mut mark = |qid: &str, row: usize, latent: &DenseMatrix| {
        let qvec = latent.row(row);
        let members = &cluster_docs[row % config.n_clusters];
        let mut scored: Vec<(f64, usize)> = members
            .iter()
            .map(|&d| (crate::linalg::dot_unchecked(qvec, docs_latent.row(d)), d))
            .collect();
        scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        for &(_, d) in scored.iter().take(config.relevant_per_query) {
            qrels.insert(qid, &format!("d{d:06}"), 1);
        }
    };
    for i in 0..config.n_train_queries {
        mark(&format!("qt{i:06}"), i, &train_latent);
    }
    for i in 0..config.n_test_queries {
        mark(&format!("qe{i:06}"), i, &test_latent);
    }

    let basis = random_orthonormal(k, m, derive_seed(config.seed, 4))?;
    let mut doc_lift_rng = seeded_rng(derive_seed(config.seed, 5));
    let docs = lift(&docs_latent, &basis, config.noise_floor, &mut doc_lift_rng);
    let mut train_lift_rng = seeded_rng(derive_seed(config.seed, 6));
    let train = lift(&train_latent, &basis, config.noise_floor, &mut train_lift_rng);
    let mut test_lift_rng = seeded_rng(derive_seed(config.seed, 7));
    let test = lift(&test_latent, &basis, config.noise_floor, &mut test_lift_rng);

    Ok(SynthData {
        docs: make_store("d", docs),
        train_queries: make_store("qt", train),
        test_queries: make_store("qe", test),
        qrels,
    })
}
