//! Distillation training: fitting compressors against a frozen teacher's
//! candidate lists with Adam on closed-form gradients.
//!
//! Randomness is budgeted per purpose from the run seed: stream 0
//! initializes the model, and each epoch draws one stream for the batch
//! shuffle and one base stream for negative sampling (further split per
//! query row). Reruns with the same seed are bit-identical.

pub mod adam;
pub mod grad;
pub mod loss;

pub use adam::{AdamConfig, AdamState};
pub use grad::{
    batch_gradients, batch_loss, ce_batch_gradients, fd_check, CeGradients, ConaeGradients,
    TrainInstance,
};
pub use loss::{
    instance_loss, kl_loss, margin_loss_doc, margin_loss_query, student_distribution,
    teacher_distribution, total_loss, LossBreakdown,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::compress::{init_ce, init_conae, CeModel, ConaeModel};
use crate::dtop::{sample_negatives, TopDocsTable};
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, seeded_rng};
use crate::qrels::Qrels;
use crate::store::EmbeddingStore;
use rand::Rng;

/// Which loss terms participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// KL distillation plus both margin terms.
    Full,
    /// Distillation only; the decoder receives no gradient.
    NoDecoder,
    /// Margin terms only.
    NoKl,
}

impl Ablation {
    pub fn name(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoDecoder => "no-decoder",
            Ablation::NoKl => "no-kl",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no-decoder" => Ok(Ablation::NoDecoder),
            "no-kl" => Ok(Ablation::NoKl),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?}; expected full, no-decoder or no-kl"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Compressed dimensionality the encoders map into.
    pub target_dim: usize,
    /// Weight of each margin term relative to the KL term.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Negatives sampled per query per epoch.
    pub n_negatives: usize,
    /// Candidate-list depth used when building teacher lists.
    pub n_top: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Give the document side its own decoder instead of sharing.
    pub two_decoders: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            target_dim: 128,
            lambda: 0.1,
            lr: 0.001,
            batch_size: 128,
            epochs: 20,
            n_negatives: 1,
            n_top: 100,
            seed: 0,
            ablation: Ablation::Full,
            two_decoders: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_dim == 0 {
            return Err(Error::Config("target_dim must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and > 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.n_negatives == 0 {
            return Err(Error::Config("n_negatives must be positive".into()));
        }
        if self.n_top == 0 {
            return Err(Error::Config("n_top must be positive".into()));
        }
        Ok(())
    }
}

/// Per-query data that stays fixed across epochs: the candidate rows with
/// their teacher scores and the chosen positive (highest judged grade,
/// ties broken by ascending doc id). Negatives are re-sampled each epoch.
struct PreparedQuery<'a> {
    row: usize,
    id: &'a str,
    query: &'a [f64],
    cands: Vec<&'a [f64]>,
    scores: Vec<f64>,
    pos: &'a [f64],
}

fn prepare_queries<'a>(
    docs: &'a EmbeddingStore,
    queries: &'a EmbeddingStore,
    qrels: &Qrels,
    dtop: &'a TopDocsTable,
) -> Result<Vec<PreparedQuery<'a>>> {
    if docs.dimension() != queries.dimension() {
        return Err(Error::dimension(
            "query store",
            docs.dimension(),
            queries.dimension(),
        ));
    }
    let mut prepared = Vec::new();
    for row in 0..queries.len() {
        let id = queries.id(row);
        if !dtop.contains(id) {
            continue;
        }
        let entries = dtop.get(id)?;
        let has_negative = entries.iter().any(|(did, _)| qrels.grade(id, did) == 0);
        if !has_negative {
            continue;
        }
        let mut pos: Option<(&str, u32)> = None;
        for (did, grade) in qrels.judgments(id) {
            if grade >= 1 && docs.position(did).is_some() {
                if pos.map_or(true, |(_, g)| grade > g) {
                    pos = Some((did, grade));
                }
            }
        }
        let Some((pos_id, _)) = pos else { continue };
        let mut cands = Vec::with_capacity(entries.len());
        let mut scores = Vec::with_capacity(entries.len());
        for (did, score) in entries {
            cands.push(docs.vector(did)?);
            scores.push(*score);
        }
        prepared.push(PreparedQuery {
            row,
            id,
            query: queries.row(row),
            cands,
            scores,
            pos: docs.vector(pos_id)?,
        });
    }
    if prepared.is_empty() {
        return Err(Error::Config(
            "no trainable queries: each needs a judged relevant document in the corpus \
             and at least one non-relevant candidate"
                .into(),
        ));
    }
    Ok(prepared)
}

fn epoch_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn build_instance<'a>(
    docs: &'a EmbeddingStore,
    qrels: &Qrels,
    dtop: &TopDocsTable,
    pq: &PreparedQuery<'a>,
    n_negatives: usize,
    neg_seed: u64,
) -> Result<TrainInstance<'a>> {
    let neg_ids = sample_negatives(pq.id, qrels, dtop, n_negatives, neg_seed)?;
    let negs = neg_ids
        .iter()
        .map(|id| docs.vector(id))
        .collect::<Result<Vec<&[f64]>>>()?;
    Ok(TrainInstance {
        query: pq.query,
        cand_docs: pq.cands.clone(),
        teacher_scores: pq.scores.clone(),
        pos: pq.pos,
        negs,
    })
}

/// Train the conditional autoencoder. Returns the model together with the
/// per-epoch mean loss breakdown.
pub fn train_conae(
    docs: &EmbeddingStore,
    queries: &EmbeddingStore,
    qrels: &Qrels,
    dtop: &TopDocsTable,
    config: &TrainConfig,
) -> Result<(ConaeModel, Vec<LossBreakdown>)> {
    config.validate()?;
    let prepared = prepare_queries(docs, queries, qrels, dtop)?;
    let mut model = init_conae(
        docs.dimension(),
        config.target_dim,
        derive_seed(config.seed, 0),
        config.two_decoders,
    )?;
    let mut blocks = vec![
        model.enc_query.data().len(),
        model.enc_doc.data().len(),
        model.dec.data().len(),
    ];
    if let Some(d) = &model.dec_doc {
        blocks.push(d.data().len());
    }
    let mut adam = AdamState::new(
        &blocks,
        AdamConfig { lr: config.lr, ..AdamConfig::default() },
    )?;

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let order = epoch_order(prepared.len(), derive_seed(config.seed, 1 + 2 * e));
        let neg_base = derive_seed(config.seed, 2 + 2 * e);
        let mut epoch_sum = LossBreakdown::default();
        let mut n_seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let pq = &prepared[i];
                    build_instance(
                        docs,
                        qrels,
                        dtop,
                        pq,
                        config.n_negatives,
                        derive_seed(neg_base, pq.row as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let (mut grads, batch_sum) = batch_gradients(&model, &batch, config)?;
            grads.scale(1.0 / batch.len() as f64);
            let mut params: Vec<&mut [f64]> = vec![
                model.enc_query.data_mut(),
                model.enc_doc.data_mut(),
                model.dec.data_mut(),
            ];
            if let Some(d) = model.dec_doc.as_mut() {
                params.push(d.data_mut());
            }
            let mut grad_slices: Vec<&[f64]> = vec![
                grads.enc_query.data(),
                grads.enc_doc.data(),
                grads.dec.data(),
            ];
            if let Some(d) = &grads.dec_doc {
                grad_slices.push(d.data());
            }
            adam.step(&mut params, &grad_slices)?;
            epoch_sum = epoch_sum.add(&batch_sum);
            n_seen += chunk.len();
        }
        history.push(epoch_sum.scaled(1.0 / n_seen as f64));
    }
    Ok((model, history))
}

/// Train the plain contrastive baseline with the same schedule and
/// sampling scheme. History is the per-epoch mean contrastive loss.
pub fn train_ce(
    docs: &EmbeddingStore,
    queries: &EmbeddingStore,
    qrels: &Qrels,
    dtop: &TopDocsTable,
    config: &TrainConfig,
) -> Result<(CeModel, Vec<f64>)> {
    config.validate()?;
    let prepared = prepare_queries(docs, queries, qrels, dtop)?;
    let mut model = init_ce(docs.dimension(), config.target_dim, derive_seed(config.seed, 0))?;
    let blocks = [model.w_query.data().len(), model.w_doc.data().len()];
    let mut adam = AdamState::new(
        &blocks,
        AdamConfig { lr: config.lr, ..AdamConfig::default() },
    )?;

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let order = epoch_order(prepared.len(), derive_seed(config.seed, 1 + 2 * e));
        let neg_base = derive_seed(config.seed, 2 + 2 * e);
        let mut epoch_sum = 0.0;
        let mut n_seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let pq = &prepared[i];
                    build_instance(
                        docs,
                        qrels,
                        dtop,
                        pq,
                        config.n_negatives,
                        derive_seed(neg_base, pq.row as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let (mut grads, batch_sum) = ce_batch_gradients(&model, &batch)?;
            grads.scale(1.0 / batch.len() as f64);
            adam.step(
                &mut [model.w_query.data_mut(), model.w_doc.data_mut()],
                &[grads.w_query.data(), grads.w_doc.data()],
            )?;
            epoch_sum += batch_sum;
            n_seen += chunk.len();
        }
        history.push(epoch_sum / n_seen as f64);
    }
    Ok((model, history))
}

/// Write one line per epoch: `epoch kl margin_q margin_d total`.
pub fn write_loss_history(path: impl AsRef<Path>, history: &[LossBreakdown]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (epoch, b) in history.iter().enumerate() {
        writeln!(w, "{epoch} {} {} {} {}", b.kl, b.margin_q, b.margin_d, b.total)?;
    }
    w.flush()?;
    Ok(())
}

/// Write one line per epoch: `epoch loss`.
pub fn write_scalar_history(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (epoch, v) in history.iter().enumerate() {
        writeln!(w, "{epoch} {v}")?;
    }
    w.flush()?;
    Ok(())
}
