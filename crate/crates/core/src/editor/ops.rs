use alloc::vec::Vec;

use crate::numcore::{minmax_normalize, orthogonal_component, sigmoid, softmax_in_place, Real, Tensor};

/// Attention outputs of one block for the same image tokens under three conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTriple<T: Real = f32> {
    /// Base prompt.
    pub base: Tensor<T>,
    /// Edit prompt.
    pub edit: Tensor<T>,
    /// Null prompt; the image prior.
    pub prior: Tensor<T>,
}

/// Per token row: `base + lambda * (edit - proj_prior(edit))`.
///
/// Rows whose mask entry is 0 are copied from `base` unchanged. `lambda == 0` returns `base`.
pub fn fine_edit<T: Real>(triple: &AttentionTriple<T>, lambda: T, mask: Option<&[u8]>) -> Tensor<T> {
    let AttentionTriple { base, edit, prior } = triple;
    assert_eq!(base.shape(), edit.shape(), "fine_edit: base/edit shape mismatch");
    assert_eq!(base.shape(), prior.shape(), "fine_edit: base/prior shape mismatch");
    if let Some(m) = mask {
        assert_eq!(m.len(), base.rows(), "fine_edit: mask length");
    }
    let mut out = base.clone();
    if lambda == T::zero() {
        return out;
    }
    for r in 0..base.rows() {
        if mask.is_some_and(|m| m[r] == 0) {
            continue;
        }
        let direction = orthogonal_component(edit.row_slice(r), prior.row_slice(r));
        for (o, d) in out.row_slice_mut(r).iter_mut().zip(direction) {
            *o += lambda * d;
        }
    }
    out
}

/// Intermediate and final values of the attention mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStages<T> {
    /// Head-averaged attention of each image query on the first edit token.
    pub first_token: Vec<T>,
    pub normalized: Vec<T>,
    /// `sigmoid(d * (normalized - 0.5))`
    pub soft: Vec<T>,
    /// `soft >= tau`
    pub binary: Vec<u8>,
}

/// Binary mask over image tokens from the attention of image queries on the edit keys.
///
/// `q_img[h]` is `[n_img, d_k]` and `k_edit[h]` is `[n_keys, d_k]` for head `h`; key row 0 is
/// the first edit-prompt token. Scores are `q k^T / sqrt(d_k)`, softmaxed over keys, and the
/// first-token column is averaged over heads before min-max normalization.
pub fn attention_mask<T: Real>(q_img: &[Tensor<T>], k_edit: &[Tensor<T>], boundary: T, tau: T) -> MaskStages<T> {
    assert_eq!(q_img.len(), k_edit.len(), "attention_mask: head count mismatch");
    assert!(!q_img.is_empty(), "attention_mask: no heads");
    let n_img = q_img[0].rows();
    let mut first = alloc::vec![T::zero(); n_img];
    for (q, k) in q_img.iter().zip(k_edit) {
        assert_eq!(q.cols(), k.cols(), "attention_mask: head dimension mismatch");
        let inv = T::one() / T::lit(q.cols() as f64).sqrt();
        let scores = crate::numcore::matmul_bt(q, k);
        let mut row = Vec::with_capacity(k.rows());
        for (i, f) in first.iter_mut().enumerate() {
            row.clear();
            row.extend(scores.row_slice(i).iter().map(|&s| s * inv));
            softmax_in_place(&mut row);
            *f += row[0];
        }
    }
    let heads = T::lit(q_img.len() as f64);
    for f in first.iter_mut() {
        *f /= heads;
    }
    let normalized = minmax_normalize(&first);
    let half = T::lit(0.5);
    let soft: Vec<T> = normalized.iter().map(|&n| sigmoid(boundary * (n - half))).collect();
    let binary = soft.iter().map(|&s| u8::from(s >= tau)).collect();
    MaskStages { first_token: first, normalized, soft, binary }
}

/// Pooled-condition edit: `(1 - lambda) c + lambda (c_e - proj_c(c_e))`.
///
/// `lambda == 0` returns `c_pool` unchanged.
pub fn coarse_edit<T: Real>(c_pool: &[T], c_e_pool: &[T], lambda: T) -> Vec<T> {
    assert_eq!(c_pool.len(), c_e_pool.len(), "coarse_edit: dimension mismatch");
    if lambda == T::zero() {
        return c_pool.to_vec();
    }
    let direction = orthogonal_component(c_e_pool, c_pool);
    let keep = T::one() - lambda;
    c_pool.iter().zip(direction).map(|(&c, d)| keep * c + lambda * d).collect()
}

/// Splits `[n, heads * d_k]` into one `[n, d_k]` tensor per head.
pub fn split_heads<T: Real>(x: &Tensor<T>, heads: usize) -> Vec<Tensor<T>> {
    let dk = x.cols() / heads;
    (0..heads)
        .map(|h| {
            let mut data = Vec::with_capacity(x.rows() * dk);
            for r in 0..x.rows() {
                data.extend_from_slice(&x.row_slice(r)[h * dk..(h + 1) * dk]);
            }
            Tensor::new(&[x.rows(), dk], data).expect("split_heads")
        })
        .collect()
}
