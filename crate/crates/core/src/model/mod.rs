//! Hierarchical spatial transformer: quadtree encoder, cross-attention decoder and the
//! dense all-pair baseline.

mod attention;
mod checkpoint;
mod decoder;
mod encoder;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::PosEncoder;
use crate::tensor::Tensor;
use crate::uq::UqConfig;
use crate::{HstError, Real, Result};

pub use attention::{all_pair_attention, dense_attention, hierarchical_attention, AttentionWeights};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use decoder::{decode, decode_batch, mse_loss, DecodeOutput, Prediction};
pub use encoder::{count_attention_pairs, encode, encoder_layer, Context, EncodedState};

/// Which attention the encoder and decoder use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Selective key sets over the quadtree.
    Hierarchical,
    /// Dense attention over every point pair.
    AllPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub feature_dim: usize,
    /// Leaf capacity `M` of the quadtree.
    pub leaf_capacity: usize,
    /// Length scale of the positional encoding, in unit-square coordinates.
    pub length_scale: f64,
    pub seed: u64,
    pub mode: AttentionMode,
    /// Reject query locations outside the context's bounding square instead of clamping.
    pub strict_bounds: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            enc_layers: 3,
            dec_layers: 3,
            feature_dim: 1,
            leaf_capacity: 20,
            length_scale: 0.1,
            seed: 0,
            mode: AttentionMode::Hierarchical,
            strict_bounds: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HstError::InvalidArgument(msg));
        if self.d_model < 4 || self.d_model % 4 != 0 {
            return bad(format!("d_model must be a positive multiple of 4, got {}", self.d_model));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.leaf_capacity == 0 {
            return Err(HstError::InvalidCapacity);
        }
        if !(self.length_scale > 0.0) || !self.length_scale.is_finite() {
            return bad(format!("length_scale must be positive, got {}", self.length_scale));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.d_model
    }
}

/// Weights of one transformer block.
#[derive(Clone, Debug)]
pub struct LayerParams<T: Real> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

const LAYER_FIELDS: [&str; 12] = ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"];

impl<T: Real> LayerParams<T> {
    fn init(rng: &mut ChaCha8Rng, d: usize, f: usize) -> Self {
        Self {
            ln1_g: ones(d),
            ln1_b: zeros(d),
            wq: xavier(rng, d, d),
            wk: xavier(rng, d, d),
            wv: xavier(rng, d, d),
            wo: xavier(rng, d, d),
            ln2_g: ones(d),
            ln2_b: zeros(d),
            w1: xavier(rng, d, f),
            b1: Tensor::zeros(&[1, f]),
            w2: xavier(rng, f, d),
            b2: zeros(d),
        }
    }

    fn fields(&self) -> [&Tensor<T>; 12] {
        [
            &self.ln1_g,
            &self.ln1_b,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ln2_g,
            &self.ln2_b,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn from_fields(mut it: impl Iterator<Item = Tensor<T>>) -> Self {
        let mut next = || it.next().expect("layer tensor");
        Self {
            ln1_g: next(),
            ln1_b: next(),
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            ln2_g: next(),
            ln2_b: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        }
    }

    pub fn attention(&self) -> AttentionWeights<'_, T> {
        AttentionWeights { wq: &self.wq, wk: &self.wk, wv: &self.wv, wo: &self.wo }
    }
}

fn ones<T: Real>(d: usize) -> Tensor<T> {
    Tensor::new(vec![T::one(); d], &[1, d]).expect("shape")
}

fn zeros<T: Real>(d: usize) -> Tensor<T> {
    Tensor::zeros(&[1, d])
}

/// Uniform Glorot initialisation.
fn xavier<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
    Tensor::new(data, &[rows, cols]).expect("shape")
}

/// All model weights plus the frozen positional encoder and the uncertainty scalars.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Real> {
    pub config: ModelConfig,
    pub pos: PosEncoder<T>,
    /// Feature-plus-target embedding, `(d/2) x (m + 1)`.
    pub embed: Tensor<T>,
    pub query_target_fill: T,
    pub enc: Vec<LayerParams<T>>,
    pub mem_g: Tensor<T>,
    pub mem_b: Tensor<T>,
    pub dec: Vec<LayerParams<T>>,
    pub out_g: Tensor<T>,
    pub out_b: Tensor<T>,
    /// Prediction head, `d x 1` and `1 x 1`.
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
    pub uq: UqConfig<T>,
}

impl<T: Real> ModelParams<T> {
    /// Seeded random initialisation. The positional encoder uses `config.seed` and the
    /// weights a stream derived from it.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let pos = PosEncoder::new(d / 2, T::lit(config.length_scale), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
        let embed = xavier(&mut rng, d / 2, config.feature_dim + 1);
        let enc = (0..config.enc_layers).map(|_| LayerParams::init(&mut rng, d, config.ffn_dim())).collect();
        let dec = (0..config.dec_layers).map(|_| LayerParams::init(&mut rng, d, config.ffn_dim())).collect();
        let head_w = xavier(&mut rng, d, 1);
        Ok(Self {
            config: config.clone(),
            pos,
            embed,
            query_target_fill: T::zero(),
            enc,
            mem_g: ones(d),
            mem_b: zeros(d),
            dec,
            out_g: ones(d),
            out_b: zeros(d),
            head_w,
            head_b: Tensor::zeros(&[1, 1]),
            uq: UqConfig::default(),
        })
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (l, layer) in self.enc.iter().enumerate() {
            out.extend(LAYER_FIELDS.iter().zip(layer.fields()).map(|(f, t)| (format!("enc.{l}.{f}"), t)));
        }
        out.push(("mem_g".into(), &self.mem_g));
        out.push(("mem_b".into(), &self.mem_b));
        for (l, layer) in self.dec.iter().enumerate() {
            out.extend(LAYER_FIELDS.iter().zip(layer.fields()).map(|(f, t)| (format!("dec.{l}.{f}"), t)));
        }
        out.push(("out_g".into(), &self.out_g));
        out.push(("out_b".into(), &self.out_b));
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Same structure with new values, in [`Self::named_tensors`] order.
    pub fn with_values(&self, values: Vec<Vec<T>>, requires_grad: bool) -> Result<Self> {
        let shapes: Vec<Vec<usize>> = self.tensors().iter().map(|t| t.shape().to_vec()).collect();
        if values.len() != shapes.len() {
            return Err(HstError::Shape(format!("{} tensors given, model has {}", values.len(), shapes.len())));
        }
        let mut tensors = values
            .into_iter()
            .zip(&shapes)
            .map(|(v, s)| if requires_grad { Tensor::param(v, s) } else { Tensor::new(v, s) })
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut take = || tensors.next().expect("tensor count checked");
        let embed = take();
        let enc = (0..self.enc.len()).map(|_| LayerParams::from_fields((0..12).map(|_| take()))).collect();
        let (mem_g, mem_b) = (take(), take());
        let dec = (0..self.dec.len()).map(|_| LayerParams::from_fields((0..12).map(|_| take()))).collect();
        let (out_g, out_b, head_w, head_b) = (take(), take(), take(), take());
        Ok(Self {
            config: self.config.clone(),
            pos: self.pos.clone(),
            embed,
            query_target_fill: self.query_target_fill,
            enc,
            mem_g,
            mem_b,
            dec,
            out_g,
            out_b,
            head_w,
            head_b,
            uq: self.uq,
        })
    }

    pub fn values(&self) -> Vec<Vec<T>> {
        self.tensors().iter().map(|t| t.data().to_vec()).collect()
    }

    /// Copy whose tensors are fresh gradient-tracking leaves.
    pub fn trainable(&self) -> Self {
        self.with_values(self.values(), true).expect("own shapes")
    }

    /// Copy with every tensor detached from any graph.
    pub fn frozen(&self) -> Self {
        self.with_values(self.values(), false).expect("own shapes")
    }

    /// Gradients after a backward pass, zeros where a tensor was not reached.
    pub fn grads(&self) -> Vec<Vec<T>> {
        self.tensors().iter().map(|t| t.grad_or_zeros()).collect()
    }
}
