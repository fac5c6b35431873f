//! `condense`: the pipeline binary. Generate or ingest teacher
//! embeddings, build candidate lists, fit compressors, index, search,
//! evaluate, and benchmark, each as a subcommand reading and writing the
//! crate's file formats.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or configuration),
//! 2 data error (missing/corrupt files, dimension mismatches).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use condense_core::compress::{compress_store, CompressorModel, Side};
use condense_core::dtop::{build_dtop, TopDocsTable};
use condense_core::error::Error;
use condense_core::eval::{
    hit_at_k, mrr_at_k, ndcg_at_k, recall_at_k, write_per_query, write_reports, MetricReport,
    RunList,
};
use condense_core::index::{
    FlatIndex, HnswIndex, HnswParams, HnswSearcher, Searcher, DEFAULT_EF_CONSTRUCTION,
    DEFAULT_EF_SEARCH, DEFAULT_M, HNSW_MAGIC,
};
use condense_core::latency::bench_latency;
use condense_core::pca::pca_fit;
use condense_core::qrels::Qrels;
use condense_core::store::{EmbeddingStore, EMBEDDING_MAGIC};
use condense_core::synth::{synth_teacher, SynthConfig};
use condense_core::train::{
    train_ce, train_conae, write_loss_history, write_scalar_history, Ablation, TrainConfig,
};
use condense_core::Result;

#[derive(Parser)]
#[command(name = "condense", version, about = "Compress, index and evaluate dense-retrieval embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Conae,
    Ce,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SideArg {
    Query,
    Doc,
}

impl From<SideArg> for Side {
    fn from(side: SideArg) -> Side {
        match side {
            SideArg::Query => Side::Query,
            SideArg::Doc => Side::Document,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IndexTypeArg {
    Flat,
    Hnsw,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic teacher: doc/query stores plus qrels.
    Synth {
        #[arg(long, default_value_t = SynthConfig::default().intrinsic_dim)]
        intrinsic_dim: usize,
        #[arg(long, default_value_t = SynthConfig::default().ambient_dim)]
        ambient_dim: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_clusters)]
        clusters: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_docs)]
        docs: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_train_queries)]
        train_queries: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_test_queries)]
        test_queries: usize,
        #[arg(long, default_value_t = SynthConfig::default().relevant_per_query)]
        relevant_per_query: usize,
        #[arg(long, default_value_t = SynthConfig::default().cluster_spread)]
        cluster_spread: f64,
        #[arg(long, default_value_t = SynthConfig::default().noise_floor)]
        noise_floor: f64,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
        /// Directory receiving docs.emb, train_queries.emb,
        /// test_queries.emb and qrels.txt.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Record the teacher's top candidates for every query.
    Dtop {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_top: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a compressor by distillation (conae) or contrastively (ce).
    Train {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        dtop: PathBuf,
        #[arg(long, value_enum, default_value = "conae")]
        model: ModelArg,
        /// Compressed dimensionality.
        #[arg(long, default_value_t = TrainConfig::default().target_dim)]
        dim: usize,
        #[arg(long, default_value_t = TrainConfig::default().lambda)]
        lambda: f64,
        #[arg(long, default_value_t = TrainConfig::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch_size: usize,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = TrainConfig::default().n_negatives)]
        negatives: usize,
        #[arg(long, default_value_t = TrainConfig::default().seed)]
        seed: u64,
        #[arg(long, default_value = "full", value_parser = parse_ablation)]
        ablation: Ablation,
        /// Give the document side its own decoder.
        #[arg(long)]
        two_decoders: bool,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-epoch loss table.
        #[arg(long)]
        loss_history: Option<PathBuf>,
    },
    /// Fit the PCA baseline on a document store.
    Pca {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a fitted model to a store.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        side: SideArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a search index over a document store.
    Index {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long = "type", value_enum, default_value = "flat")]
        index_type: IndexTypeArg,
        #[arg(long, default_value_t = DEFAULT_M)]
        m: usize,
        #[arg(long, default_value_t = DEFAULT_EF_CONSTRUCTION)]
        ef_construction: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve top-k documents for every query into a TREC run file.
    Search {
        #[arg(long)]
        index: PathBuf,
        /// Document store backing an hnsw index (ignored for flat).
        #[arg(long)]
        docs: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_EF_SEARCH)]
        ef_search: usize,
        #[arg(long, default_value = "condense")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run file against qrels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated list like `mrr@10,ndcg@10,recall@1000,hit@20`.
        #[arg(long, default_value = "mrr@10,ndcg@10,recall@1000,hit@20,hit@100")]
        metrics: String,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-query TSV.
        #[arg(long)]
        per_query: Option<PathBuf>,
    },
    /// Measure per-query search latency.
    Bench {
        #[arg(long)]
        index: PathBuf,
        /// Document store backing an hnsw index (ignored for flat).
        #[arg(long)]
        docs: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = DEFAULT_EF_SEARCH)]
        ef_search: usize,
        /// Optional file receiving the raw samples.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            intrinsic_dim,
            ambient_dim,
            clusters,
            docs,
            train_queries,
            test_queries,
            relevant_per_query,
            cluster_spread,
            noise_floor,
            seed,
            out_dir,
        } => {
            let config = SynthConfig {
                intrinsic_dim,
                ambient_dim,
                n_clusters: clusters,
                n_docs: docs,
                n_train_queries: train_queries,
                n_test_queries: test_queries,
                relevant_per_query,
                cluster_spread,
                noise_floor,
                seed,
            };
            eprintln!(
                "[synth] intrinsic-dim={intrinsic_dim} ambient-dim={ambient_dim} \
                 clusters={clusters} docs={docs} train-queries={train_queries} \
                 test-queries={test_queries} relevant-per-query={relevant_per_query} \
                 cluster-spread={cluster_spread} noise-floor={noise_floor} seed={seed} \
                 out-dir={}",
                out_dir.display()
            );
            let data = synth_teacher(&config)?;
            fs::create_dir_all(&out_dir)?;
            data.docs.save(out_dir.join("docs.emb"))?;
            data.train_queries.save(out_dir.join("train_queries.emb"))?;
            data.test_queries.save(out_dir.join("test_queries.emb"))?;
            data.qrels.save(out_dir.join("qrels.txt"))?;
            Ok(())
        }
        Command::Dtop { docs, queries, n_top, out } => {
            eprintln!(
                "[dtop] docs={} queries={} n-top={n_top} out={}",
                docs.display(),
                queries.display(),
                out.display()
            );
            let doc_store = EmbeddingStore::load(&docs)?;
            let query_store = EmbeddingStore::load(&queries)?;
            let table = build_dtop(&doc_store, &query_store, n_top)?;
            table.save(&out)?;
            Ok(())
        }
        Command::Train {
            docs,
            queries,
            qrels,
            dtop,
            model,
            dim,
            lambda,
            lr,
            batch_size,
            epochs,
            negatives,
            seed,
            ablation,
            two_decoders,
            out,
            loss_history,
        } => {
            let model_name = match model {
                ModelArg::Conae => "conae",
                ModelArg::Ce => "ce",
            };
            eprintln!(
                "[train] docs={} queries={} qrels={} dtop={} model={model_name} dim={dim} \
                 lambda={lambda} lr={lr} batch-size={batch_size} epochs={epochs} \
                 negatives={negatives} seed={seed} ablation={} two-decoders={two_decoders} \
                 out={}",
                docs.display(),
                queries.display(),
                qrels.display(),
                dtop.display(),
                ablation.name(),
                out.display()
            );
            let doc_store = EmbeddingStore::load(&docs)?;
            let query_store = EmbeddingStore::load(&queries)?;
            let judgments = Qrels::load(&qrels)?;
            let table = TopDocsTable::load(&dtop)?;
            let config = TrainConfig {
                target_dim: dim,
                lambda,
                lr,
                batch_size,
                epochs,
                n_negatives: negatives,
                n_top: TrainConfig::default().n_top,
                seed,
                ablation,
                two_decoders,
            };
            match model {
                ModelArg::Conae => {
                    let (fitted, history) =
                        train_conae(&doc_store, &query_store, &judgments, &table, &config)?;
                    CompressorModel::Conae(fitted).save(&out)?;
                    if let Some(path) = loss_history {
                        write_loss_history(path, &history)?;
                    }
                    if let Some(last) = history.last() {
                        eprintln!(
                            "[train] final epoch: kl={} margin_q={} margin_d={} total={}",
                            last.kl, last.margin_q, last.margin_d, last.total
                        );
                    }
                }
                ModelArg::Ce => {
                    let (fitted, history) =
                        train_ce(&doc_store, &query_store, &judgments, &table, &config)?;
                    CompressorModel::Ce(fitted).save(&out)?;
                    if let Some(path) = loss_history {
                        write_scalar_history(path, &history)?;
                    }
                    if let Some(last) = history.last() {
                        eprintln!("[train] final epoch: loss={last}");
                    }
                }
            }
            Ok(())
        }
        Command::Pca { docs, dim, out } => {
            eprintln!("[pca] docs={} dim={dim} out={}", docs.display(), out.display());
            let doc_store = EmbeddingStore::load(&docs)?;
            let model = pca_fit(&doc_store, dim)?;
            CompressorModel::Pca(model).save(&out)?;
            Ok(())
        }
        Command::Compress { model, input, side, out } => {
            let side_name = match side {
                SideArg::Query => "query",
                SideArg::Doc => "doc",
            };
            eprintln!(
                "[compress] model={} input={} side={side_name} out={}",
                model.display(),
                input.display(),
                out.display()
            );
            let compressor = CompressorModel::load(&model)?;
            let store = EmbeddingStore::load(&input)?;
            let compressed = compress_store(&compressor, &store, side.into())?;
            compressed.save(&out)?;
            Ok(())
        }
        Command::Index { docs, index_type, m, ef_construction, seed, out } => {
            let type_name = match index_type {
                IndexTypeArg::Flat => "flat",
                IndexTypeArg::Hnsw => "hnsw",
            };
            eprintln!(
                "[index] docs={} type={type_name} m={m} ef-construction={ef_construction} \
                 seed={seed} out={}",
                docs.display(),
                out.display()
            );
            let store = EmbeddingStore::load(&docs)?;
            match index_type {
                IndexTypeArg::Flat => {
                    // a flat index is the store itself; re-saving validates
                    // and canonicalizes the file
                    store.save(&out)?;
                }
                IndexTypeArg::Hnsw => {
                    let params = HnswParams { m, ef_construction, seed };
                    let index = HnswIndex::build(&store, &params)?;
                    index.save(&out)?;
                }
            }
            Ok(())
        }
        Command::Search { index, docs, queries, k, ef_search, tag, out } => {
            eprintln!(
                "[search] index={} docs={} queries={} k={k} ef-search={ef_search} tag={tag} \
                 out={}",
                index.display(),
                docs.as_deref().map(Path::display).map_or("-".into(), |d| d.to_string()),
                queries.display(),
                out.display()
            );
            let query_store = EmbeddingStore::load(&queries)?;
            let loaded = LoadedIndex::open(&index, docs.as_deref())?;
            let searcher = loaded.searcher(ef_search)?;
            let mut run = RunList::new(tag);
            for row in 0..query_store.len() {
                let hits = searcher.search(query_store.row(row), k)?;
                run.set_ranking(
                    query_store.id(row),
                    hits.into_iter().map(|h| (h.doc_id, h.score)).collect(),
                )?;
            }
            run.save(&out)?;
            Ok(())
        }
        Command::Evaluate { run, qrels, metrics, out, per_query } => {
            eprintln!(
                "[evaluate] run={} qrels={} metrics={metrics} out={}",
                run.display(),
                qrels.display(),
                out.display()
            );
            let specs = parse_metrics(&metrics)?;
            let run_list = RunList::load(&run)?;
            let judgments = Qrels::load(&qrels)?;
            let mut reports = Vec::with_capacity(specs.len());
            for (kind, k) in specs {
                let report = match kind {
                    MetricKind::Mrr => mrr_at_k(&run_list, &judgments, k)?,
                    MetricKind::Ndcg => ndcg_at_k(&run_list, &judgments, k)?,
                    MetricKind::Recall => recall_at_k(&run_list, &judgments, k)?,
                    MetricKind::Hit => hit_at_k(&run_list, &judgments, k)?,
                };
                log_report(&report);
                reports.push(report);
            }
            write_reports(&reports, &out)?;
            if let Some(path) = per_query {
                write_per_query(&reports, path)?;
            }
            Ok(())
        }
        Command::Bench { index, docs, queries, k, warmup, reps, ef_search, out } => {
            eprintln!(
                "[bench] index={} docs={} queries={} k={k} warmup={warmup} reps={reps} \
                 ef-search={ef_search}",
                index.display(),
                docs.as_deref().map(Path::display).map_or("-".into(), |d| d.to_string()),
                queries.display()
            );
            let query_store = EmbeddingStore::load(&queries)?;
            let loaded = LoadedIndex::open(&index, docs.as_deref())?;
            let searcher = loaded.searcher(ef_search)?;
            let report = bench_latency(searcher.as_ref(), &query_store, k, warmup, reps)?;
            println!(
                "mean_ms\t{}\np50_ms\t{}\np95_ms\t{}\nqueries\t{}\nwarmup\t{}\nreps\t{}",
                report.mean_ms,
                report.p50_ms,
                report.p95_ms,
                query_store.len(),
                report.warmup,
                report.reps
            );
            if let Some(path) = out {
                let mut text = String::new();
                for s in &report.samples_ms {
                    text.push_str(&format!("{s}\n"));
                }
                fs::write(path, text)?;
            }
            Ok(())
        }
    }
}

/// An index file plus whatever it needs to search: flat indexes are
/// self-contained stores, hnsw graphs also need the original vectors.
enum LoadedIndex {
    Flat(EmbeddingStore),
    Hnsw(HnswIndex, EmbeddingStore),
}

impl LoadedIndex {
    fn open(index_path: &Path, docs: Option<&Path>) -> Result<LoadedIndex> {
        let mut magic = [0u8; 8];
        let mut f = fs::File::open(index_path)?;
        f.read_exact(&mut magic)
            .map_err(|_| Error::Config(format!("{} is too short to be an index", index_path.display())))?;
        drop(f);
        if &magic == EMBEDDING_MAGIC {
            Ok(LoadedIndex::Flat(EmbeddingStore::load(index_path)?))
        } else if &magic == HNSW_MAGIC {
            let docs_path = docs.ok_or_else(|| {
                Error::Config("an hnsw index needs --docs with the original store".into())
            })?;
            let index = HnswIndex::load(index_path)?;
            let store = EmbeddingStore::load(docs_path)?;
            Ok(LoadedIndex::Hnsw(index, store))
        } else {
            Err(Error::Config(format!(
                "{} is neither an embedding store nor an hnsw index",
                index_path.display()
            )))
        }
    }

    fn searcher(&self, ef_search: usize) -> Result<Box<dyn Searcher + '_>> {
        Ok(match self {
            LoadedIndex::Flat(store) => Box::new(FlatIndex::new(store)?),
            LoadedIndex::Hnsw(index, store) => {
                Box::new(HnswSearcher { index, store, ef_search })
            }
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum MetricKind {
    Mrr,
    Ndcg,
    Recall,
    Hit,
}

fn parse_metrics(list: &str) -> Result<Vec<(MetricKind, usize)>> {
    let mut specs = Vec::new();
    for token in list.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let (name, k) = token.split_once('@').ok_or_else(|| {
            Error::Config(format!("metric {token:?} is not of the form name@k"))
        })?;
        let kind = match name {
            "mrr" => MetricKind::Mrr,
            "ndcg" => MetricKind::Ndcg,
            "recall" => MetricKind::Recall,
            "hit" => MetricKind::Hit,
            other => {
                return Err(Error::Config(format!(
                    "unknown metric {other:?}; expected mrr, ndcg, recall or hit"
                )))
            }
        };
        let k: usize = k
            .parse()
            .map_err(|_| Error::Config(format!("bad cutoff in metric {token:?}")))?;
        specs.push((kind, k));
    }
    if specs.is_empty() {
        return Err(Error::Config("empty metric list".into()));
    }
    Ok(specs)
}

fn log_report(report: &MetricReport) {
    eprintln!(
        "[evaluate] {} = {} over {} queries ({} in run but unjudged)",
        report.metric, report.aggregate, report.n_evaluated, report.n_skipped
    );
}
