use std::sync::Arc;

use super::{AttentionMode, LayerParams, ModelParams};
use super::attention::{all_pair_attention, hierarchical_attention};
use crate::encoding::{feature_target_rows, UnitFrame};
use crate::quadtree::{KeySetTable, PointSet, PoolingMatrix, QuadTree};
use crate::tensor::Tensor;
use crate::{HstError, Real, Result};

/// Tree-derived structures shared by every layer of one forward pass.
#[derive(Clone, Debug)]
pub struct Context<'a, T: Real> {
    pub tree: &'a QuadTree<T>,
    pub table: Arc<KeySetTable>,
    pub pool: Arc<PoolingMatrix<T>>,
    pub frame: UnitFrame<T>,
}

impl<'a, T: Real> Context<'a, T> {
    pub fn new(tree: &'a QuadTree<T>) -> Self {
        Self {
            tree,
            table: Arc::new(KeySetTable::for_points(tree)),
            pool: Arc::new(PoolingMatrix::new(tree)),
            frame: UnitFrame::new(tree.bounds()),
        }
    }
}

/// Output of the encoder.
#[derive(Clone, Debug)]
pub struct EncodedState<'a, T: Real> {
    pub ctx: Context<'a, T>,
    /// Final node embeddings: points first, then cells. In all-pair mode only points.
    pub h: Tensor<T>,
    /// `h` after the memory layer norm; keys and values of the decoder come from it.
    pub memory: Tensor<T>,
}

impl<T: Real> EncodedState<'_, T> {
    pub fn num_points(&self) -> usize {
        self.ctx.tree.num_points()
    }
}

/// `n x d` initial embeddings `[W [x; y] ; phi(s)]` of the context points.
pub(crate) fn embed_rows<T: Real>(
    params: &ModelParams<T>,
    xy: Vec<T>,
    coords: &[[T; 2]],
    frame: &UnitFrame<T>,
) -> Result<Tensor<T>> {
    let n = coords.len();
    let m1 = params.config.feature_dim + 1;
    let xy = Tensor::new(xy, &[n, m1])?;
    let unit: Vec<[T; 2]> = coords.iter().map(|&s| frame.to_unit(s)).collect();
    let phi = Tensor::new(params.pos.encode_all(&unit), &[n, params.pos.dim()])?;
    xy.matmul(&params.embed.transpose()?)?.concat_cols(&phi)
}

pub(crate) fn ffn<T: Real>(x: &Tensor<T>, lp: &LayerParams<T>) -> Result<Tensor<T>> {
    x.matmul(&lp.w1)?.add_row(&lp.b1)?.gelu().matmul(&lp.w2)?.add_row(&lp.b2)
}

/// Pre-norm block over the point rows `h_o`.
///
/// Cell rows are re-pooled from the incoming point rows, then read as keys and values
/// only; the attention and feed-forward updates apply to point rows.
pub fn encoder_layer<T: Real>(
    params: &ModelParams<T>,
    ctx: &Context<'_, T>,
    h_o: &Tensor<T>,
    lp: &LayerParams<T>,
) -> Result<Tensor<T>> {
    let heads = params.config.heads;
    let attn = match params.config.mode {
        AttentionMode::Hierarchical => {
            let h = h_o.concat_rows(&h_o.pool(&ctx.pool)?)?;
            let x = h.layer_norm(&lp.ln1_g, &lp.ln1_b)?;
            hierarchical_attention(&x, &ctx.table, lp.attention(), heads)?
        }
        AttentionMode::AllPair => {
            let x = h_o.layer_norm(&lp.ln1_g, &lp.ln1_b)?;
            all_pair_attention(&x, lp.attention(), heads)?
        }
    };
    let h = h_o.add(&attn)?;
    h.add(&ffn(&h.layer_norm(&lp.ln2_g, &lp.ln2_b)?, lp)?)
}

/// Embed the context points and run every encoder layer.
pub fn encode<'a, T: Real>(params: &ModelParams<T>, points: &PointSet<T>, tree: &'a QuadTree<T>) -> Result<EncodedState<'a, T>> {
    if tree.num_points() != points.len() {
        return Err(HstError::Shape(format!("tree indexes {} points, set has {}", tree.num_points(), points.len())));
    }
    if points.feature_dim() != params.config.feature_dim {
        return Err(HstError::Shape(format!(
            "model expects {} features, points have {}",
            params.config.feature_dim,
            points.feature_dim()
        )));
    }
    let ctx = Context::new(tree);
    let xy = feature_target_rows(points, true, params.query_target_fill);
    let mut h_o = embed_rows(params, xy, points.coords(), &ctx.frame)?;
    for lp in &params.enc {
        h_o = encoder_layer(params, &ctx, &h_o, lp)?;
    }
    let h = match params.config.mode {
        AttentionMode::Hierarchical => h_o.concat_rows(&h_o.pool(&ctx.pool)?)?,
        AttentionMode::AllPair => h_o,
    };
    let memory = h.layer_norm(&params.mem_g, &params.mem_b)?;
    Ok(EncodedState { ctx, h, memory })
}

/// Total number of query-key pairs the hierarchical encoder scores per head.
pub fn count_attention_pairs<T: Real>(tree: &QuadTree<T>) -> u64 {
    tree.total_key_pairs()
}
