use std::sync::Arc;

use crate::quadtree::KeySetTable;
use crate::tensor::Tensor;
use crate::{HstError, Real, Result};

/// Projection matrices of one attention block, each `d x d`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights<'a, T: Real> {
    pub wq: &'a Tensor<T>,
    pub wk: &'a Tensor<T>,
    pub wv: &'a Tensor<T>,
    pub wo: &'a Tensor<T>,
}

/// Sparse attention of the first `table.num_queries()` rows of `h` over their key sets.
///
/// `h` holds every node of the tree, points first; only the point rows act as queries.
pub fn hierarchical_attention<T: Real>(
    h: &Tensor<T>,
    table: &Arc<KeySetTable>,
    w: AttentionWeights<'_, T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let n = table.num_queries();
    if h.shape().len() != 2 || h.shape()[0] < n {
        return Err(HstError::Shape(format!("{n} queries but node matrix has shape {:?}", h.shape())));
    }
    let q = h.slice_rows(0, n)?.matmul(w.wq)?;
    let k = h.matmul(w.wk)?;
    let v = h.matmul(w.wv)?;
    q.keyed_attention(&k, &v, table, heads)?.matmul(w.wo)
}

/// Dense multi-head attention from `queries` to every row of `context`.
pub fn dense_attention<T: Real>(
    queries: &Tensor<T>,
    context: &Tensor<T>,
    w: AttentionWeights<'_, T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let q = queries.matmul(w.wq)?;
    let k = context.matmul(w.wk)?;
    let v = context.matmul(w.wv)?;
    let d = q.shape()[1];
    if heads == 0 || d % heads != 0 {
        return Err(HstError::Shape(format!("{d} columns do not split into {heads} heads")));
    }
    let dh = d / heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut out: Option<Tensor<T>> = None;
    for head in 0..heads {
        let qh = q.slice_cols(head * dh, dh)?;
        let kh = k.slice_cols(head * dh, dh)?;
        let vh = v.slice_cols(head * dh, dh)?;
        let weights = qh.matmul(&kh.transpose()?)?.scale(scale).softmax_rows()?;
        let o = weights.matmul(&vh)?;
        out = Some(match out {
            None => o,
            Some(acc) => acc.concat_cols(&o)?,
        });
    }
    out.expect("at least one head").matmul(w.wo)
}

/// Every point attends to every point.
pub fn all_pair_attention<T: Real>(h_o: &Tensor<T>, w: AttentionWeights<'_, T>, heads: usize) -> Result<Tensor<T>> {
    dense_attention(h_o, h_o, w, heads)
}
