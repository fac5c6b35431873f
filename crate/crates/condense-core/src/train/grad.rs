//! Closed-form gradients of the training loss, plus the finite-difference
//! oracle that validates them.
//!
//! The loss is linear maps feeding a softmax KL term and tanh margins, so
//! the chain rule stays shallow: the KL-through-softmax gradient is the
//! (student − teacher) probability difference pushed through outer
//! products, and each tanh contributes a 1 − tanh² factor.
//!
//! Batch gradients are the SUM over instances (the train loop rescales to
//! a mean). Summation uses a midpoint-split reduction tree so that
//! duplicating every batch element doubles the result exactly: the two
//! halves of the doubled batch reduce to bitwise-identical subtotals, and
//! x + x is exact in IEEE arithmetic.

use crate::compress::{CeModel, ConaeModel, Encoder, Side};
use crate::error::{Error, Result};
use crate::linalg::{dot_unchecked, softmax_stable, DenseMatrix};
use crate::train::loss::{
    instance_loss, kl_loss, total_loss, LossBreakdown,
};
use crate::train::{Ablation, TrainConfig};

/// One query's training data, all in the teacher space: the candidate
/// list with its stored teacher scores, the judged positive, and the
/// sampled negatives.
#[derive(Debug, Clone)]
pub struct TrainInstance<'a> {
    pub query: &'a [f64],
    pub cand_docs: Vec<&'a [f64]>,
    pub teacher_scores: Vec<f64>,
    pub pos: &'a [f64],
    pub negs: Vec<&'a [f64]>,
}

/// Gradients with the same shapes as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConaeGradients {
    pub enc_query: DenseMatrix,
    pub enc_doc: DenseMatrix,
    pub dec: DenseMatrix,
    pub dec_doc: Option<DenseMatrix>,
}

impl ConaeGradients {
    fn zeros_like(model: &ConaeModel) -> Self {
        ConaeGradients {
            enc_query: DenseMatrix::zeros(model.enc_query.rows(), model.enc_query.cols()),
            enc_doc: DenseMatrix::zeros(model.enc_doc.rows(), model.enc_doc.cols()),
            dec: DenseMatrix::zeros(model.dec.rows(), model.dec.cols()),
            dec_doc: model
                .dec_doc
                .as_ref()
                .map(|d| DenseMatrix::zeros(d.rows(), d.cols())),
        }
    }

    fn merge(mut self, other: ConaeGradients) -> ConaeGradients {
        self.enc_query.add_assign(&other.enc_query);
        self.enc_doc.add_assign(&other.enc_doc);
        self.dec.add_assign(&other.dec);
        if let (Some(a), Some(b)) = (&mut self.dec_doc, &other.dec_doc) {
            a.add_assign(b);
        }
        self
    }

    pub fn scale(&mut self, s: f64) {
        self.enc_query.scale(s);
        self.enc_doc.scale(s);
        self.dec.scale(s);
        if let Some(d) = &mut self.dec_doc {
            d.scale(s);
        }
    }

    pub fn norm(&self) -> f64 {
        let mut sq = self.enc_query.frobenius_norm().powi(2)
            + self.enc_doc.frobenius_norm().powi(2)
            + self.dec.frobenius_norm().powi(2);
        if let Some(d) = &self.dec_doc {
            sq += d.frobenius_norm().powi(2);
        }
        sq.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeGradients {
    pub w_query: DenseMatrix,
    pub w_doc: DenseMatrix,
}

impl CeGradients {
    fn merge(mut self, other: CeGradients) -> CeGradients {
        self.w_query.add_assign(&other.w_query);
        self.w_doc.add_assign(&other.w_doc);
        self
    }

    pub fn scale(&mut self, s: f64) {
        self.w_query.scale(s);
        self.w_doc.scale(s);
    }
}

/// Midpoint-split reduction. `items` must be non-empty.
fn tree_sum<T>(items: Vec<T>, merge: fn(T, T) -> T) -> T {
    fn reduce<T>(slots: &mut Vec<Option<T>>, lo: usize, hi: usize, merge: fn(T, T) -> T) -> T {
        if hi - lo == 1 {
            return slots[lo].take().expect("each slot consumed once");
        }
        let mid = lo + (hi - lo) / 2;
        let left = reduce(slots, lo, mid, merge);
        let right = reduce(slots, mid, hi, merge);
        merge(left, right)
    }
    let n = items.len();
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    reduce(&mut slots, 0, n, merge)
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn sech2(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

fn check_instance(model: &ConaeModel, inst: &TrainInstance) -> Result<()> {
    let k = model.input_dim();
    for (what, len) in [("query", inst.query.len()), ("positive doc", inst.pos.len())] {
        if len != k {
            return Err(Error::dimension(what, k, len));
        }
    }
    for d in inst.cand_docs.iter().chain(inst.negs.iter()) {
        if d.len() != k {
            return Err(Error::dimension("candidate doc", k, d.len()));
        }
    }
    if inst.cand_docs.len() != inst.teacher_scores.len() {
        return Err(Error::dimension(
            "teacher scores",
            inst.cand_docs.len(),
            inst.teacher_scores.len(),
        ));
    }
    if inst.negs.is_empty() {
        return Err(Error::EmptyInput("train instance without negatives"));
    }
    Ok(())
}

/// Gradient and loss of one instance's total loss.
fn instance_gradients(
    model: &ConaeModel,
    inst: &TrainInstance,
    config: &TrainConfig,
) -> Result<(ConaeGradients, LossBreakdown)> {
    check_instance(model, inst)?;
    let lambda = config.lambda;
    let mut g = ConaeGradients::zeros_like(model);
    let u = model.encode(inst.query, Side::Query)?;
    let k = model.input_dim();
    let mut kl = 0.0;
    let mut margin_q = 0.0;
    let mut margin_d = 0.0;

    if config.ablation != Ablation::NoKl {
        let p = softmax_stable(&inst.teacher_scores)?;
        let v: Vec<Vec<f64>> = inst
            .cand_docs
            .iter()
            .map(|d| model.encode(d, Side::Document))
            .collect::<Result<_>>()?;
        let t: Vec<f64> = v.iter().map(|vi| dot_unchecked(&u, vi)).collect();
        let r = softmax_stable(&t)?;
        kl = kl_loss(&p, &r)?;
        let mut g_u = vec![0.0; u.len()];
        let mut weighted_docs = vec![0.0; k];
        for j in 0..v.len() {
            let w = r[j] - p[j];
            axpy(&mut g_u, w, &v[j]);
            axpy(&mut weighted_docs, w, inst.cand_docs[j]);
        }
        g.enc_query.add_scaled_outer(1.0, &g_u, inst.query)?;
        g.enc_doc.add_scaled_outer(1.0, &u, &weighted_docs)?;
    }

    if config.ablation != Ablation::NoDecoder {
        let n = inst.negs.len() as f64;

        // query-side margin: decode the query, score teacher docs
        let dec_q = model.decoder(Side::Query).mat_vec(&u)?;
        let a_pos = dot_unchecked(&dec_q, inst.pos);
        margin_q = 1.0 - a_pos.tanh();
        let mut g_hq = vec![0.0; k];
        axpy(&mut g_hq, -sech2(a_pos), inst.pos);
        for neg in &inst.negs {
            let a_neg = dot_unchecked(&dec_q, neg);
            margin_q += a_neg.tanh() / n;
            axpy(&mut g_hq, sech2(a_neg) / n, neg);
        }
        g.dec.add_scaled_outer(lambda, &g_hq, &u)?;
        let ct_ghq = model.decoder(Side::Query).tr_mat_vec(&g_hq)?;
        g.enc_query.add_scaled_outer(lambda, &ct_ghq, inst.query)?;

        // doc-side margin: decode the documents, score the teacher query
        let dec_d = model.decoder(Side::Document);
        let g_dec_d = if g.dec_doc.is_some() {
            g.dec_doc.as_mut().unwrap()
        } else {
            &mut g.dec
        };
        let cdt_q = dec_d.tr_mat_vec(inst.query)?;
        let v_pos = model.encode(inst.pos, Side::Document)?;
        let b_pos = dot_unchecked(inst.query, &dec_d.mat_vec(&v_pos)?);
        margin_d = 1.0 - b_pos.tanh();
        g_dec_d.add_scaled_outer(-lambda * sech2(b_pos), inst.query, &v_pos)?;
        g.enc_doc
            .add_scaled_outer(-lambda * sech2(b_pos), &cdt_q, inst.pos)?;
        for neg in &inst.negs {
            let v_neg = model.encode(neg, Side::Document)?;
            let b_neg = dot_unchecked(inst.query, &dec_d.mat_vec(&v_neg)?);
            margin_d += b_neg.tanh() / n;
            let coef = lambda * sech2(b_neg) / n;
            let g_dec_d = if g.dec_doc.is_some() {
                g.dec_doc.as_mut().unwrap()
            } else {
                &mut g.dec
            };
            g_dec_d.add_scaled_outer(coef, inst.query, &v_neg)?;
            g.enc_doc.add_scaled_outer(coef, &cdt_q, neg)?;
        }
    }

    Ok((g, total_loss(kl, margin_q, margin_d, config)))
}

/// Analytic gradients of the batch-summed total loss, with the batch's
/// summed loss breakdown.
pub fn batch_gradients(
    model: &ConaeModel,
    batch: &[TrainInstance],
    config: &TrainConfig,
) -> Result<(ConaeGradients, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("gradient batch"));
    }
    let per_instance: Vec<(ConaeGradients, LossBreakdown)> = batch
        .iter()
        .map(|inst| instance_gradients(model, inst, config))
        .collect::<Result<_>>()?;
    let (grads, losses): (Vec<_>, Vec<_>) = per_instance.into_iter().unzip();
    let total_grad = tree_sum(grads, ConaeGradients::merge);
    let total_loss = tree_sum(losses, |a, b| a.add(&b));
    Ok((total_grad, total_loss))
}

/// Contrastive loss for CE: softmax over {positive} ∪ negatives in the
/// encoded space, negative log-likelihood of the positive. Returns the
/// batch-summed gradient and loss.
pub fn ce_batch_gradients(
    model: &CeModel,
    batch: &[TrainInstance],
) -> Result<(CeGradients, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("gradient batch"));
    }
    let items: Vec<(CeGradients, f64)> = batch
        .iter()
        .map(|inst| ce_instance_gradients(model, inst))
        .collect::<Result<_>>()?;
    let (grads, losses): (Vec<_>, Vec<_>) = items.into_iter().unzip();
    let grad = tree_sum(grads, CeGradients::merge);
    let loss = tree_sum(losses, |a, b| a + b);
    Ok((grad, loss))
}

fn ce_instance_gradients(model: &CeModel, inst: &TrainInstance) -> Result<(CeGradients, f64)> {
    if inst.negs.is_empty() {
        return Err(Error::EmptyInput("train instance without negatives"));
    }
    let u = model.encode(inst.query, Side::Query)?;
    let mut cands: Vec<&[f64]> = Vec::with_capacity(1 + inst.negs.len());
    cands.push(inst.pos);
    cands.extend(inst.negs.iter().copied());
    let encoded: Vec<Vec<f64>> = cands
        .iter()
        .map(|d| model.encode(d, Side::Document))
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = encoded.iter().map(|w| dot_unchecked(&u, w)).collect();
    let p = softmax_stable(&scores)?;
    let loss = -p[0].ln();
    let mut g = CeGradients {
        w_query: DenseMatrix::zeros(model.w_query.rows(), model.w_query.cols()),
        w_doc: DenseMatrix::zeros(model.w_doc.rows(), model.w_doc.cols()),
    };
    let mut g_u = vec![0.0; u.len()];
    for (i, w) in encoded.iter().enumerate() {
        let coef = p[i] - if i == 0 { 1.0 } else { 0.0 };
        axpy(&mut g_u, coef, w);
        g.w_doc.add_scaled_outer(coef, &u, cands[i])?;
    }
    g.w_query.add_scaled_outer(1.0, &g_u, inst.query)?;
    Ok((g, loss))
}

/// Total loss summed over the batch, computed through the loss module's
/// own code path (used as the target function for finite differences).
pub fn batch_loss(
    model: &ConaeModel,
    batch: &[TrainInstance],
    config: &TrainConfig,
) -> Result<f64> {
    let losses: Vec<f64> = batch
        .iter()
        .map(|inst| instance_loss(model, inst, config).map(|b| b.total))
        .collect::<Result<_>>()?;
    Ok(tree_sum(losses, |a, b| a + b))
}

/// Central-difference verification of `batch_gradients` over every
/// parameter. Returns the worst relative error
/// |analytic − fd| / max(|fd|, 1e-8).
pub fn fd_check(
    model: &ConaeModel,
    batch: &[TrainInstance],
    config: &TrainConfig,
    epsilon: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!(
            "fd epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let (analytic, _) = batch_gradients(model, batch, config)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let n_mats = if model.dec_doc.is_some() { 4 } else { 3 };
    for mat in 0..n_mats {
        let len = grad_matrix(&analytic, mat).data().len();
        for idx in 0..len {
            let original = matrix_mut(&mut probe, mat).data()[idx];
            matrix_mut(&mut probe, mat).data_mut()[idx] = original + epsilon;
            let plus = batch_loss(&probe, batch, config)?;
            matrix_mut(&mut probe, mat).data_mut()[idx] = original - epsilon;
            let minus = batch_loss(&probe, batch, config)?;
            matrix_mut(&mut probe, mat).data_mut()[idx] = original;
            let fd = (plus - minus) / (2.0 * epsilon);
            let a = grad_matrix(&analytic, mat).data()[idx];
            let rel = (a - fd).abs() / fd.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn grad_matrix(g: &ConaeGradients, which: usize) -> &DenseMatrix {
    match which {
        0 => &g.enc_query,
        1 => &g.enc_doc,
        2 => &g.dec,
        _ => g.dec_doc.as_ref().expect("two-decoder gradient"),
    }
}

fn matrix_mut(m: &mut ConaeModel, which: usize) -> &mut DenseMatrix {
    match which {
        0 => &mut m.enc_query,
        1 => &mut m.enc_doc,
        2 => &mut m.dec,
        _ => m.dec_doc.as_mut().expect("two-decoder model"),
    }
}
