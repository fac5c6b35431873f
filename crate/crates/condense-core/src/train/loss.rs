//! Loss functions: the distillation KL term over teacher candidate lists
//! and the tanh max-margin reconstruction terms.

use crate::compress::{ConaeModel, Encoder, Side};
use crate::dtop::TopDocsTable;
use crate::error::{Error, Result};
use crate::linalg::{dot, softmax_stable};
use crate::train::{Ablation, TrainConfig};

/// Softmax over a query's stored teacher scores, in candidate-list order.
pub fn teacher_distribution(query_id: &str, dtop: &TopDocsTable) -> Result<Vec<f64>> {
    let scores: Vec<f64> = dtop.get(query_id)?.iter().map(|(_, s)| *s).collect();
    softmax_stable(&scores)
}

/// Softmax over encoded dot products against the same candidates, in the
/// same order.
pub fn student_distribution<M: Encoder>(
    model: &M,
    query: &[f64],
    docs: &[&[f64]],
) -> Result<Vec<f64>> {
    let u = model.encode(query, Side::Query)?;
    let mut scores = Vec::with_capacity(docs.len());
    for d in docs {
        let v = model.encode(d, Side::Document)?;
        scores.push(dot(&u, &v)?);
    }
    softmax_stable(&scores)
}

/// KL(p ‖ q) = Σ pᵢ ln(pᵢ/qᵢ), with 0·ln(0/q) taken as 0. Non-negative
/// for valid distributions by Gibbs' inequality.
pub fn kl_loss(p_teacher: &[f64], p_student: &[f64]) -> Result<f64> {
    if p_teacher.len() != p_student.len() {
        return Err(Error::dimension(
            "kl distributions",
            p_teacher.len(),
            p_student.len(),
        ));
    }
    let mut sum = 0.0;
    for (&p, &q) in p_teacher.iter().zip(p_student) {
        if p > 0.0 {
            sum += p * (p / q).ln();
        }
    }
    Ok(sum)
}

fn margin(pos_score: f64, neg_scores: &[f64]) -> f64 {
    let mean_neg: f64 =
        neg_scores.iter().map(|s| s.tanh()).sum::<f64>() / neg_scores.len() as f64;
    1.0 + mean_neg - pos_score.tanh()
}

/// 1 + tanh f(ĥ_q, d⁻) − tanh f(ĥ_q, d⁺), where ĥ_q is the decoded query
/// and the document vectors stay in the teacher space. With several
/// negatives the negative term is their mean, keeping the value in
/// [−1, 3]. No hinge is applied.
pub fn margin_loss_query(
    model: &ConaeModel,
    h_q: &[f64],
    h_dpos: &[f64],
    h_dnegs: &[&[f64]],
) -> Result<f64> {
    if h_dnegs.is_empty() {
        return Err(Error::EmptyInput("margin loss needs a negative"));
    }
    let code = model.encode(h_q, Side::Query)?;
    let decoded = model.decoder(Side::Query).mat_vec(&code)?;
    let pos = dot(&decoded, h_dpos)?;
    let negs = h_dnegs
        .iter()
        .map(|n| dot(&decoded, n))
        .collect::<Result<Vec<f64>>>()?;
    Ok(margin(pos, &negs))
}

/// The document-side mirror: documents are decoded, the query stays in
/// the teacher space.
pub fn margin_loss_doc(
    model: &ConaeModel,
    h_q: &[f64],
    h_dpos: &[f64],
    h_dnegs: &[&[f64]],
) -> Result<f64> {
    if h_dnegs.is_empty() {
        return Err(Error::EmptyInput("margin loss needs a negative"));
    }
    let decoder = model.decoder(Side::Document);
    let score = |d: &[f64]| -> Result<f64> {
        let decoded = decoder.mat_vec(&model.encode(d, Side::Document)?)?;
        dot(h_q, &decoded)
    };
    let pos = score(h_dpos)?;
    let negs = h_dnegs.iter().map(|n| score(n)).collect::<Result<Vec<f64>>>()?;
    Ok(margin(pos, &negs))
}

/// The three loss components and their weighted sum. Ablations zero the
/// dropped term before the sum, so `total` always reflects what training
/// actually optimizes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub kl: f64,
    pub margin_q: f64,
    pub margin_d: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&self, other: &LossBreakdown) -> LossBreakdown {
        LossBreakdown {
            kl: self.kl + other.kl,
            margin_q: self.margin_q + other.margin_q,
            margin_d: self.margin_d + other.margin_d,
            total: self.total + other.total,
        }
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            kl: self.kl * s,
            margin_q: self.margin_q * s,
            margin_d: self.margin_d * s,
            total: self.total * s,
        }
    }
}

/// Total loss of one training instance, assembled purely from the loss
/// functions above. The gradient module computes the same value on its
/// own fused path; keeping this one separate gives finite-difference
/// checks a target that shares no code with the gradients.
pub fn instance_loss(
    model: &ConaeModel,
    inst: &crate::train::grad::TrainInstance,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut kl = 0.0;
    let mut margin_q = 0.0;
    let mut margin_d = 0.0;
    if config.ablation != Ablation::NoKl {
        let p = softmax_stable(&inst.teacher_scores)?;
        let r = student_distribution(model, inst.query, &inst.cand_docs)?;
        kl = kl_loss(&p, &r)?;
    }
    if config.ablation != Ablation::NoDecoder {
        margin_q = margin_loss_query(model, inst.query, inst.pos, &inst.negs)?;
        margin_d = margin_loss_doc(model, inst.query, inst.pos, &inst.negs)?;
    }
    Ok(total_loss(kl, margin_q, margin_d, config))
}

/// total = kl + λ·margin_q + λ·margin_d, after ablation zeroing.
pub fn total_loss(kl: f64, margin_q: f64, margin_d: f64, config: &TrainConfig) -> LossBreakdown {
    let kl = if config.ablation == Ablation::NoKl { 0.0 } else { kl };
    let (margin_q, margin_d) = if config.ablation == Ablation::NoDecoder {
        (0.0, 0.0)
    } else {
        (margin_q, margin_d)
    };
    LossBreakdown {
        kl,
        margin_q,
        margin_d,
        total: kl + config.lambda * margin_q + config.lambda * margin_d,
    }
}
