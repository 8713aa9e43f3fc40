use std::sync::Arc;

use super::attention::dense_attention;
use super::encoder::{embed_rows, ffn, EncodedState};
use super::{AttentionMode, ModelParams};
use crate::quadtree::KeySetTable;
use crate::tensor::Tensor;
use crate::uq::kq_norm_sq;
use crate::{HstError, Real, Result};

/// Point prediction with its uncertainty score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction<T> {
    pub y_hat: T,
    pub u: T,
    /// `|K_t q_t|^2` before the temperature is applied, kept for calibration.
    pub kq_sq: T,
}

/// Batched decoder output.
#[derive(Clone, Debug)]
pub struct DecodeOutput<T: Real> {
    /// `num_queries x 1` predictions, attached to the graph when parameters track gradients.
    pub y: Tensor<T>,
    pub kq_sq: Vec<T>,
}

impl<T: Real> DecodeOutput<T> {
    pub fn predictions(&self, params: &ModelParams<T>) -> Vec<Prediction<T>> {
        self.y
            .data()
            .iter()
            .zip(&self.kq_sq)
            .map(|(&y_hat, &kq_sq)| Prediction { y_hat, u: params.uq.score(kq_sq), kq_sq })
            .collect()
    }
}

fn resolve_locations<T: Real>(params: &ModelParams<T>, state: &EncodedState<'_, T>, locs: &[[T; 2]]) -> Result<Vec<[T; 2]>> {
    let bounds = state.ctx.tree.bounds();
    locs.iter()
        .map(|&s| {
            if !(s[0].is_finite() && s[1].is_finite()) {
                return Err(HstError::NonFinite("query location"));
            }
            if bounds.contains_closed(s) {
                Ok(s)
            } else if params.config.strict_bounds {
                Err(HstError::OutOfBounds { x: s[0].as_f64(), y: s[1].as_f64() })
            } else {
                Ok(bounds.clamp(s))
            }
        })
        .collect()
}

/// Predict at `locs` with query features `features` (row-major, `locs.len() x m`).
pub fn decode_batch<T: Real>(
    params: &ModelParams<T>,
    state: &EncodedState<'_, T>,
    features: &[T],
    locs: &[[T; 2]],
) -> Result<DecodeOutput<T>> {
    let m = params.config.feature_dim;
    let nq = locs.len();
    if nq == 0 {
        return Err(HstError::InvalidArgument("no query locations".into()));
    }
    if features.len() != nq * m {
        return Err(HstError::Shape(format!("{} feature values for {nq} queries of width {m}", features.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(HstError::NonFinite("query features"));
    }
    let locs = resolve_locations(params, state, locs)?;
    let mut xy = Vec::with_capacity(nq * (m + 1));
    for row in features.chunks(m) {
        xy.extend_from_slice(row);
        xy.push(params.query_target_fill);
    }
    let mut h = embed_rows(params, xy, &locs, &state.ctx.frame)?;

    let table = match params.config.mode {
        AttentionMode::Hierarchical => Some(Arc::new(KeySetTable::for_locations(state.ctx.tree, &locs)?)),
        AttentionMode::AllPair => None,
    };
    let heads = params.config.heads;
    let mut last_q: Option<Tensor<T>> = None;
    for lp in &params.dec {
        let x = h.layer_norm(&lp.ln1_g, &lp.ln1_b)?;
        let w = lp.attention();
        let attn = match &table {
            Some(table) => {
                let q = x.matmul(w.wq)?;
                let k = state.memory.matmul(w.wk)?;
                let v = state.memory.matmul(w.wv)?;
                let out = q.keyed_attention(&k, &v, table, heads)?.matmul(w.wo)?;
                last_q = Some(q);
                out
            }
            None => {
                last_q = Some(x.matmul(w.wq)?);
                dense_attention(&x, &state.memory, w, heads)?
            }
        };
        h = h.add(&attn)?;
        h = h.add(&ffn(&h.layer_norm(&lp.ln2_g, &lp.ln2_b)?, lp)?)?;
    }
    let out = h.layer_norm(&params.out_g, &params.out_b)?;
    let y = out.matmul(&params.head_w)?.add_row(&params.head_b)?;

    let q = last_q.unwrap_or(out);
    let d = params.config.d_model;
    let mem = state.memory.data();
    let kq_sq = (0..nq)
        .map(|i| {
            let qi = &q.data()[i * d..(i + 1) * d];
            match &table {
                Some(table) => table.keys_of(i).iter().map(|&r| kq_norm_sq(qi, &mem[r * d..(r + 1) * d])).sum(),
                None => kq_norm_sq(qi, mem),
            }
        })
        .collect();
    Ok(DecodeOutput { y, kq_sq })
}

/// Predict the target at one location.
pub fn decode<T: Real>(params: &ModelParams<T>, state: &EncodedState<'_, T>, x_t: &[T], s_t: [T; 2]) -> Result<Prediction<T>> {
    let out = decode_batch(params, state, x_t, &[s_t])?;
    Ok(out.predictions(params)[0])
}

/// Mean squared error between `y` (`n x 1`) and `targets`.
pub fn mse_loss<T: Real>(y: &Tensor<T>, targets: &[T]) -> Result<Tensor<T>> {
    let t = Tensor::new(targets.to_vec(), y.shape())?;
    let diff = y.sub(&t)?;
    Ok(diff.mul(&diff)?.mean())
}
