//! Training objectives with exact gradients.
//!
//! The total objective for the shared extractor is
//! `L_id + triplet_weight * L_triplet - lambda * L_adv`.

use serde::{Deserialize, Serialize};

use crate::common::{pairwise_sq_euclidean, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient of `value` with respect to the loss input.
    pub grad: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletStats {
    /// Fraction of anchors with strictly positive loss.
    pub active_fraction: f64,
    pub mean_hard_pos_dist: f64,
    pub mean_hard_neg_dist: f64,
    /// `(hardest positive, hardest negative)` per anchor.
    pub hardest: Vec<(usize, usize)>,
}

/// Mean softmax cross-entropy over the batch.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch {
        return Err(Error::shape("softmax_cross_entropy: labels", batch, labels.len()));
    }
    if batch == 0 {
        return Err(Error::invalid("softmax_cross_entropy on an empty batch"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut grad = Matrix::zeros(batch, classes);
    let mut total = 0.0;
    let scale = 1.0 / batch as f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label];
        for (g, v) in grad.row_mut(i).iter_mut().zip(row) {
            *g = (v - log_z).exp() * scale;
        }
        grad.row_mut(i)[label] -= scale;
    }
    let value = total * scale;
    if !value.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy"));
    }
    Ok(LossOutput { value, grad })
}

/// Cross-entropy of the scene classifier. The sign flip for the extractor is
/// applied by the model's backward pass, not here.
pub fn scene_adversarial_loss(scene_logits: &Matrix, scene_labels: &[usize]) -> Result<LossOutput> {
    softmax_cross_entropy(scene_logits, scene_labels)
}

/// Batch-hard triplet loss on Euclidean distances.
///
/// Per anchor: `max(0, margin + max_p d(a,p) - min_n d(a,n))`, averaged over
/// all anchors. Ties in the hardest-pair search go to the lowest index.
pub fn batch_hard_triplet(
    embeddings: &Matrix,
    labels: &[usize],
    margin: f64,
) -> Result<(LossOutput, TripletStats)> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::shape("batch_hard_triplet: labels", n, labels.len()));
    }
    check_triplet_batch(labels)?;

    let sq = pairwise_sq_euclidean(embeddings, embeddings)?;
    let dist = |i: usize, j: usize| sq.get(i, j).sqrt();
    let mut grad = Matrix::zeros(n, embeddings.cols());
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut active = 0usize;
    let mut sum_pos = 0.0;
    let mut sum_neg = 0.0;
    let mut hardest = Vec::with_capacity(n);

    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist(a, j);
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        let ((p, dp), (q, dn)) = (pos.expect("checked K >= 2"), neg.expect("checked >= 2 classes"));
        hardest.push((p, q));
        sum_pos += dp;
        sum_neg += dn;
        let loss = margin + dp - dn;
        if loss > 0.0 {
            total += loss;
            active += 1;
            add_distance_grad(&mut grad, embeddings, a, p, dp, scale);
            add_distance_grad(&mut grad, embeddings, a, q, dn, -scale);
        }
    }

    let nf = n as f64;
    Ok((
        LossOutput {
            value: total / nf,
            grad,
        },
        TripletStats {
            active_fraction: active as f64 / nf,
            mean_hard_pos_dist: sum_pos / nf,
            mean_hard_neg_dist: sum_neg / nf,
            hardest,
        },
    ))
}

fn check_triplet_batch(labels: &[usize]) -> Result<()> {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Contract(
            "batch_hard_triplet needs at least 2 classes in the batch".into(),
        ));
    }
    if let Some((class, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Contract(format!(
            "batch_hard_triplet: class {class} has a single sample in the batch"
        )));
    }
    Ok(())
}

/// Accumulates `scale * ∂d(a,b)/∂(x_a, x_b)`; zero distance contributes nothing.
fn add_distance_grad(grad: &mut Matrix, emb: &Matrix, a: usize, b: usize, d: f64, scale: f64) {
    if d == 0.0 {
        return;
    }
    let k = scale / d;
    let diff: Vec<f64> = emb.row(a).iter().zip(emb.row(b)).map(|(x, y)| x - y).collect();
    for (g, v) in grad.row_mut(a).iter_mut().zip(&diff) {
        *g += k * v;
    }
    for (g, v) in grad.row_mut(b).iter_mut().zip(&diff) {
        *g -= k * v;
    }
}

/// `l_id + triplet_weight * l_triplet - lambda * l_adv`.
pub fn total_loss(l_id: f64, l_triplet: f64, l_adv: f64, triplet_weight: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 || triplet_weight < 0.0 {
        return Err(Error::invalid("loss weights must be >= 0"));
    }
    let v = l_id + triplet_weight * l_triplet - lambda * l_adv;
    if !v.is_finite() {
        return Err(Error::NonFinite("total_loss"));
    }
    Ok(v)
}

/// Row-wise L2 normalization; returns the normalized rows and the norms.
pub fn l2_normalize_rows(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = crate::common::norm(m.row(i));
        if n == 0.0 {
            return Err(Error::ZeroNorm("l2_normalize_rows"));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient w.r.t. normalized rows back to the raw rows.
pub fn l2_normalize_backward(normalized: &Matrix, norms: &[f64], grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for (i, &n) in norms.iter().enumerate() {
        let y = normalized.row(i);
        let proj = crate::common::dot(y, grad.row(i));
        for (o, yv) in out.row_mut(i).iter_mut().zip(y) {
            *o = (*o - yv * proj) / n;
        }
    }
    out
}
