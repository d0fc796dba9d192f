//! Review co-attention, text/image fusion and the cross-modal alignment loss.
//!
//! These are the reference (non-differentiable) forms. The training graph in
//! [`crate::model`] builds the same computations on the tape; tests keep the
//! two routes in agreement.

use std::collections::HashMap;

use crate::data::{Dataset, ItemVocab};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Smoothing constant inside `log(p / (q + eps))`.
pub const MATCH_EPS: f64 = 1e-8;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(what()))
    }
}

/// `A = tanh(t_item^T * m_r * t_user)`, shape `M x N`.
pub fn affinity_matrix(t_item: &Matrix, t_user: &Matrix, m_r: &Matrix) -> Result<Matrix> {
    check(m_r.rows() == m_r.cols(), || "M_R must be square".into())?;
    check(t_item.rows() == m_r.rows() && t_user.rows() == m_r.cols(), || {
        format!(
            "item reviews {:?}, user reviews {:?}, M_R {:?}",
            t_item.shape(),
            t_user.shape(),
            m_r.shape()
        )
    })?;
    let projected = m_r.matmul(t_user)?;
    Ok(t_item.transpose().matmul(&projected)?.map(f64::tanh))
}

/// Softmax over the row maxima of `a`.
pub fn relevance_vector(a: &Matrix) -> Result<Vec<f64>> {
    check(a.rows() >= 1 && a.cols() >= 1, || "affinity matrix is empty".into())?;
    let maxima: Vec<f64> = (0..a.rows())
        .map(|r| a.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(softmax(&maxima))
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `W_p * [t_user_n ; t_item * a]`, a `d_t` vector.
pub fn remodel_review(t_user_n: &[f64], a: &[f64], t_item: &Matrix, w_p: &Matrix) -> Result<Vec<f64>> {
    let d = t_user_n.len();
    check(t_item.rows() == d && t_item.cols() == a.len(), || {
        format!("review bank {:?} vs {} weights over dim {d}", t_item.shape(), a.len())
    })?;
    check(w_p.cols() == 2 * d, || format!("W_p {:?} for text dim {d}", w_p.shape()))?;
    let aggregated = t_item.matmul(&Matrix::column(a))?;
    let mut stacked = t_user_n.to_vec();
    stacked.extend_from_slice(aggregated.as_slice());
    Ok(w_p.matmul(&Matrix::column(&stacked))?.into_vec())
}

/// Column `n` of the result is `W_m * [t_n ; z_n]`.
pub fn fuse_views(t_user: &Matrix, z_user: &Matrix, w_m: &Matrix) -> Result<Matrix> {
    check(t_user.cols() == z_user.cols(), || "text and image sequence lengths differ".into())?;
    check(w_m.cols() == t_user.rows() + z_user.rows(), || {
        format!(
            "W_m {:?} for text dim {} + image dim {}",
            w_m.shape(),
            t_user.rows(),
            z_user.rows()
        )
    })?;
    let mut data = t_user.as_slice().to_vec();
    data.extend_from_slice(z_user.as_slice());
    let stacked = Matrix::from_vec(t_user.rows() + z_user.rows(), t_user.cols(), data)?;
    w_m.matmul(&stacked)
}

/// `P[i][j] = softmax_j(t_i . z_j / |z_j|)`.
pub fn match_probabilities(t_user: &Matrix, z_user: &Matrix) -> Result<Matrix> {
    check(t_user.rows() == z_user.rows(), || {
        format!("text dim {} differs from image dim {}", t_user.rows(), z_user.rows())
    })?;
    check(t_user.cols() == z_user.cols(), || "text and image sequence lengths differ".into())?;
    let n = z_user.cols();
    let mut z_bar = z_user.clone();
    for j in 0..n {
        let norm = (0..z_user.rows()).map(|r| z_user[(r, j)].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormImage(j));
        }
        for r in 0..z_user.rows() {
            z_bar[(r, j)] /= norm;
        }
    }
    let logits = t_user.transpose().matmul(&z_bar)?;
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in softmax(logits.row(i)).into_iter().enumerate() {
            p[(i, j)] = v;
        }
    }
    Ok(p)
}

/// `(1/N) sum_ij p_ij log(p_ij / (q_ij + eps))` with `q` the row-normalised
/// pair indicators.
pub fn cross_modal_loss(p: &Matrix, pairs: &Matrix, eps: f64) -> Result<f64> {
    check(p.shape() == pairs.shape() && p.rows() == p.cols(), || {
        format!("P {:?} vs indicators {:?}", p.shape(), pairs.shape())
    })?;
    let n = p.rows();
    let mut total = 0.0;
    for i in 0..n {
        let row_sum: f64 = pairs.row(i).iter().sum();
        check(row_sum >= 1.0, || format!("indicator row {i} has no match"))?;
        for j in 0..n {
            let pij = p[(i, j)];
            if pij > 0.0 {
                total += pij * (pij / (pairs[(i, j)] / row_sum + eps)).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// Other users' reviews of each item, most recent first.
#[derive(Clone, Debug, Default)]
pub struct ItemReviewBank {
    reviews: HashMap<usize, Vec<(String, String)>>,
}

impl ItemReviewBank {
    /// Collect every review in `train` that has a text embedding.
    pub fn build(train: &Dataset, vocab: &ItemVocab, text: &EmbeddingTable) -> Self {
        let mut reviews: HashMap<usize, Vec<(u64, usize, String, String)>> = HashMap::new();
        for (pos, it) in train.interactions().iter().enumerate() {
            let (Some(item), Some(review)) = (vocab.index(&it.item_id), it.review_id.as_ref()) else {
                continue;
            };
            if text.get(review).is_some() {
                reviews
                    .entry(item)
                    .or_default()
                    .push((it.timestamp, pos, it.user_id.clone(), review.clone()));
            }
        }
        let reviews = reviews
            .into_iter()
            .map(|(item, mut v)| {
                v.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
                (item, v.into_iter().map(|(_, _, u, r)| (u, r)).collect())
            })
            .collect();
        ItemReviewBank { reviews }
    }

    /// Up to `m_max` review embeddings of `item` not written by `exclude_user`,
    /// as a `d_t x M` matrix. `None` when the item has no such review.
    pub fn bank_for(
        &self,
        item: usize,
        exclude_user: &str,
        m_max: usize,
        text: &EmbeddingTable,
    ) -> Result<Option<Matrix>> {
        let Some(list) = self.reviews.get(&item) else {
            return Ok(None);
        };
        let columns: Vec<Vec<f64>> = list
            .iter()
            .filter(|(u, _)| u != exclude_user)
            .take(m_max)
            .map(|(_, r)| text.lookup(r))
            .collect::<Result<_>>()?;
        if columns.is_empty() {
            return Ok(None);
        }
        let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
        Ok(Some(Matrix::from_columns(&refs, text.dim())?))
    }

    pub fn len(&self, item: usize) -> usize {
        self.reviews.get(&item).map_or(0, Vec::len)
    }
}
