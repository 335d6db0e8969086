//! Temporal feature fusion necks sitting between per-frame backbone features
//! (B, T, F) and the classification head.

use candle_core::{Tensor, D};
use candle_nn::{Linear, Module, VarBuilder, RNN};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeckKind {
    Lstm,
    Mlp,
    Transformer,
}

/// Neck hyperparameters. Defaults follow the training recipe: hidden size 64
/// and 2 layers for the LSTM, 8 heads and 2 layers for the transformer. The
/// MLP defaults to a single hidden layer (one 4096 -> 64 projection); its
/// depth is exposed here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeckSpec {
    pub kind: NeckKind,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub attention_heads: usize,
    pub feedforward_dim: usize,
}

impl NeckSpec {
    pub fn lstm() -> Self {
        Self {
            kind: NeckKind::Lstm,
            hidden_size: 64,
            num_layers: 2,
            attention_heads: 0,
            feedforward_dim: 0,
        }
    }

    pub fn mlp() -> Self {
        Self {
            kind: NeckKind::Mlp,
            hidden_size: 64,
            num_layers: 1,
            attention_heads: 0,
            feedforward_dim: 0,
        }
    }

    pub fn transformer() -> Self {
        Self {
            kind: NeckKind::Transformer,
            hidden_size: 0,
            num_layers: 2,
            attention_heads: 8,
            feedforward_dim: 3600,
        }
    }

    /// Downscaled variant for desk-scale experiments, keyed off a reduced
    /// backbone feature width.
    pub fn scaled(kind: NeckKind, feature_dim: usize) -> Self {
        match kind {
            NeckKind::Lstm => Self { hidden_size: feature_dim.min(32), ..Self::lstm() },
            NeckKind::Mlp => Self { hidden_size: feature_dim.min(32), ..Self::mlp() },
            NeckKind::Transformer => Self {
                feedforward_dim: feature_dim * 2,
                attention_heads: 4,
                ..Self::transformer()
            },
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.num_layers == 0 {
            return Err("num_layers must be >= 1".into());
        }
        match self.kind {
            NeckKind::Lstm | NeckKind::Mlp => {
                if self.hidden_size == 0 {
                    return Err("hidden_size must be >= 1".into());
                }
            }
            NeckKind::Transformer => {
                if self.attention_heads == 0 || self.feedforward_dim == 0 {
                    return Err("transformer neck needs attention_heads and feedforward_dim".into());
                }
            }
        }
        Ok(())
    }
}

pub enum Neck {
    Lstm(LstmNeck),
    Mlp(MlpNeck),
    Transformer(TransformerNeck),
}

impl Neck {
    pub fn new(spec: &NeckSpec, feature_dim: usize, num_frames: usize, vb: VarBuilder) -> Result<Self> {
        spec.validate().map_err(|msg| Error::Invalid { what: "neck spec", msg })?;
        Ok(match spec.kind {
            NeckKind::Lstm => Neck::Lstm(LstmNeck::new(spec, feature_dim, vb.pp("lstm"))?),
            NeckKind::Mlp => Neck::Mlp(MlpNeck::new(spec, feature_dim, num_frames, vb.pp("mlp"))?),
            NeckKind::Transformer => {
                Neck::Transformer(TransformerNeck::new(spec, feature_dim, num_frames, vb.pp("transformer"))?)
            }
        })
    }

    /// Fused feature width handed to the head.
    pub fn out_dim(&self) -> usize {
        match self {
            Neck::Lstm(n) => n.hidden,
            Neck::Mlp(n) => n.hidden,
            Neck::Transformer(n) => n.d_model,
        }
    }

    /// (B, T, F) -> (B, out_dim).
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        match self {
            Neck::Lstm(n) => n.forward(features),
            Neck::Mlp(n) => n.forward(features),
            Neck::Transformer(n) => n.forward(features),
        }
    }
}

/// Stacked LSTM; the fused representation is the final hidden state of the
/// last layer.
pub struct LstmNeck {
    layers: Vec<candle_nn::LSTM>,
    hidden: usize,
}

impl LstmNeck {
    fn new(spec: &NeckSpec, feature_dim: usize, vb: VarBuilder) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.num_layers);
        let mut in_dim = feature_dim;
        for layer_idx in 0..spec.num_layers {
            let cfg = candle_nn::LSTMConfig { layer_idx, ..Default::default() };
            layers.push(candle_nn::lstm(in_dim, spec.hidden_size, cfg, vb.clone())?);
            in_dim = spec.hidden_size;
        }
        Ok(Self { layers, hidden: spec.hidden_size })
    }

    fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let mut seq = features.clone();
        let mut last_h = None;
        for lstm in &self.layers {
            let states = lstm.seq(&seq)?;
            let hs: Vec<Tensor> = states.iter().map(|s| s.h().clone()).collect();
            seq = Tensor::stack(&hs, 1)?;
            last_h = Some(states.last().expect("T >= 1").h().clone());
        }
        Ok(last_h.expect("at least one layer"))
    }
}

/// Flattens time and features (T * F) and applies hidden layers with ReLU.
pub struct MlpNeck {
    layers: Vec<Linear>,
    hidden: usize,
    num_frames: usize,
    feature_dim: usize,
}

impl MlpNeck {
    fn new(spec: &NeckSpec, feature_dim: usize, num_frames: usize, vb: VarBuilder) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.num_layers);
        let mut in_dim = num_frames * feature_dim;
        for i in 0..spec.num_layers {
            layers.push(candle_nn::linear(in_dim, spec.hidden_size, vb.pp(format!("fc{i}")))?);
            in_dim = spec.hidden_size;
        }
        Ok(Self { layers, hidden: spec.hidden_size, num_frames, feature_dim })
    }

    fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let (b, t, f) = features.dims3()?;
        if t != self.num_frames || f != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "mlp neck built for T={} F={}, got T={t} F={f}",
                self.num_frames, self.feature_dim
            )));
        }
        let mut out = features.reshape((b, t * f))?;
        for layer in &self.layers {
            out = layer.forward(&out)?.relu()?;
        }
        Ok(out)
    }
}

/// Transformer encoder (post-norm, multi-head self attention) over the T
/// timesteps at d_model = F, with learned positional embeddings and mean
/// pooling over time.
pub struct TransformerNeck {
    pos_embedding: Tensor,
    blocks: Vec<EncoderBlock>,
    d_model: usize,
    heads: usize,
}

struct EncoderBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

/// Layer norm over the last dim, written with plain tensor ops so it is
/// differentiable in every dtype (candle's fused kernel is f32-only and has
/// no backward pass).
struct Norm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl Norm {
    fn new(dim: usize, eps: f64, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(dim, "weight", candle_nn::Init::Const(1.0))?,
            bias: vb.get_with_hints(dim, "bias", candle_nn::Init::Const(0.0))?,
            eps,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dim(D::Minus1)? as f64;
        let mean = (x.sum_keepdim(D::Minus1)? / d)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = (centered.sqr()?.sum_keepdim(D::Minus1)? / d)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

impl TransformerNeck {
    fn new(spec: &NeckSpec, feature_dim: usize, num_frames: usize, vb: VarBuilder) -> Result<Self> {
        if feature_dim % spec.attention_heads != 0 {
            return Err(Error::Invalid {
                what: "neck spec",
                msg: format!(
                    "feature dim {feature_dim} not divisible by {} heads",
                    spec.attention_heads
                ),
            });
        }
        let pos_embedding = vb.pp("pos_embedding").get_with_hints(
            (num_frames, feature_dim),
            "weight",
            candle_nn::Init::Const(0.0),
        )?;
        let mut blocks = Vec::with_capacity(spec.num_layers);
        for i in 0..spec.num_layers {
            let bvb = vb.pp(format!("block{i}"));
            blocks.push(EncoderBlock {
                q: candle_nn::linear(feature_dim, feature_dim, bvb.pp("attn.q"))?,
                k: candle_nn::linear(feature_dim, feature_dim, bvb.pp("attn.k"))?,
                v: candle_nn::linear(feature_dim, feature_dim, bvb.pp("attn.v"))?,
                o: candle_nn::linear(feature_dim, feature_dim, bvb.pp("attn.o"))?,
                norm1: Norm::new(feature_dim, 1e-5, bvb.pp("norm1"))?,
                ff1: candle_nn::linear(feature_dim, spec.feedforward_dim, bvb.pp("ff1"))?,
                ff2: candle_nn::linear(spec.feedforward_dim, feature_dim, bvb.pp("ff2"))?,
                norm2: Norm::new(feature_dim, 1e-5, bvb.pp("norm2"))?,
            });
        }
        Ok(Self {
            pos_embedding,
            blocks,
            d_model: feature_dim,
            heads: spec.attention_heads,
        })
    }

    fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let (_b, t, f) = features.dims3()?;
        if f != self.d_model {
            return Err(Error::ShapeMismatch(format!(
                "transformer neck built for F={}, got F={f}",
                self.d_model
            )));
        }
        let _ = t;
        let mut x = features.broadcast_add(&self.pos_embedding)?;
        for block in &self.blocks {
            x = block.forward(&x, self.heads)?;
        }
        // Mean pool over time.
        Ok(x.mean(1)?)
    }
}

impl EncoderBlock {
    fn forward(&self, x: &Tensor, heads: usize) -> Result<Tensor> {
        let attn = self.attention(x, heads)?;
        let x = self.norm1.forward(&(x + attn)?)?;
        let ff = self.ff2.forward(&self.ff1.forward(&x)?.relu()?)?;
        Ok(self.norm2.forward(&(x + ff)?)?)
    }

    fn attention(&self, x: &Tensor, heads: usize) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let dk = d / heads;
        let split = |t_: Tensor| -> Result<Tensor> {
            Ok(t_.reshape((b, t, heads, dk))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let scores = (q.matmul(&k.transpose(D::Minus2, D::Minus1)?)? * scale)?;
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = weights.matmul(&v)?; // (B, heads, T, dk)
        let merged = ctx.transpose(1, 2)?.reshape((b, t, d))?;
        Ok(self.o.forward(&merged)?)
    }
}
