//! (2+1)D-factorized 18-layer residual video network.
//!
//! Every spatiotemporal t x d x d convolution is replaced by a 1 x d x d
//! spatial convolution followed by a t x 1 x 1 temporal convolution, with an
//! intermediate width chosen so the pair approximately matches the parameter
//! count of the full 3D convolution. The 3D convolutions are realized with 2D
//! and 1D primitives through reshapes; parameter shapes and counts match the
//! direct 3D formulation.

use candle_core::Tensor;
use candle_nn::{Conv2d, Module, VarBuilder};

use super::layers::{conv2d, global_avg_pool, Bn};
use super::BackboneConfig;
use crate::error::Result;

/// Intermediate width of the factorized pair: parameter parity with the
/// t x d x d 3D convolution it replaces.
pub fn midplanes(in_c: usize, out_c: usize, t: usize, d: usize) -> usize {
    (t * d * d * in_c * out_c) / (d * d * in_c + t * out_c)
}

/// Spatial 1 x d x d convolution over a (B, C, T, H, W) tensor, realized as a
/// 2D convolution over the flattened batch-time dim. Callers fold/unfold the
/// time axis so batch norm can run in the flat layout.
struct SpatialConv {
    conv: Conv2d,
}

impl SpatialConv {
    fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, padding: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self { conv: conv2d(in_c, out_c, kernel, stride, padding, vb)? })
    }
}

/// Temporal t x 1 x 1 convolution, realized as a 1D convolution with every
/// spatial location folded into the batch dim.
struct TemporalConv {
    weight: Tensor,
    stride: usize,
    padding: usize,
}

impl TemporalConv {
    fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, padding: usize, vb: VarBuilder) -> Result<Self> {
        let weight =
            vb.get_with_hints((out_c, in_c, kernel), "weight", candle_nn::Init::Const(0.0))?;
        Ok(Self { weight, stride, padding })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t, h, w) = x.dims5()?;
        let mut x = x
            .permute((0, 3, 4, 1, 2))?
            .reshape((b * h * w, c, t))?
            .contiguous()?;
        if self.padding > 0 {
            x = x.pad_with_zeros(2, self.padding, self.padding)?;
        }
        // Run the 1D convolution as a 2D one over a unit-width axis: candle's
        // 1D backward pass mixes batch entries (its conv_transpose1d kernel
        // is broken for batch > 1), while the 2D path is exact.
        let (oc, ic, k) = self.weight.dims3()?;
        // Trim padding the strided conv never reads, so the backward pass
        // needs no output padding (candle applies it to both axes at once).
        let len = x.dim(2)?;
        let out_len = (len - k) / self.stride + 1;
        let needed = (out_len - 1) * self.stride + k;
        if needed < len {
            x = x.narrow(2, 0, needed)?;
        }
        let w4 = self.weight.reshape((oc, ic, k, 1))?;
        let out = x.unsqueeze(3)?.conv2d(&w4, 0, self.stride, 1, 1)?.squeeze(3)?;
        let (_, oc, ot) = out.dims3()?;
        Ok(out
            .reshape((b, h, w, oc, ot))?
            .permute((0, 3, 4, 1, 2))?
            .contiguous()?)
    }
}

/// The factorized pair with batch norm and ReLU between the two halves.
struct Conv2Plus1d {
    spatial: SpatialConv,
    bn_mid: Bn,
    temporal: TemporalConv,
}

impl Conv2Plus1d {
    #[allow(clippy::too_many_arguments)]
    fn new(
        in_c: usize,
        out_c: usize,
        mid: usize,
        spatial_stride: usize,
        temporal_stride: usize,
        trainable: bool,
        vb: VarBuilder,
    ) -> Result<Self> {
        let spatial = SpatialConv::new(in_c, mid, 3, spatial_stride, 1, vb.pp("spatial"))?;
        let bn_mid = Bn::new(mid, trainable, vb.pp("bn_mid"))?;
        let temporal = TemporalConv::new(mid, out_c, 3, temporal_stride, 1, vb.pp("temporal"))?;
        Ok(Self { spatial, bn_mid, temporal })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        // Batch norm on the (B*T, M, H, W) layout sees exactly the same
        // per-channel element set as a 3D batch norm on (B, M, T, H, W).
        let (b, c, t, h, w) = x.dims5()?;
        let flat = x.transpose(1, 2)?.reshape((b * t, c, h, w))?;
        let s = self.spatial.conv.forward(&flat)?;
        let s = self.bn_mid.forward(&s, train)?.relu()?;
        let (_, mc, mh, mw) = s.dims4()?;
        let s = s.reshape((b, t, mc, mh, mw))?.transpose(1, 2)?.contiguous()?;
        self.temporal.forward(&s)
    }
}

/// 1 x 1 x 1 convolution with (temporal, spatial, spatial) stride, used on
/// residual shortcuts. With a unit kernel, temporal striding is plain
/// subsampling of the T axis.
struct Downsample3d {
    conv: Conv2d,
    temporal_stride: usize,
}

impl Downsample3d {
    fn new(in_c: usize, out_c: usize, spatial_stride: usize, temporal_stride: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            conv: conv2d(in_c, out_c, 1, spatial_stride, 0, vb)?,
            temporal_stride,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t, h, w) = x.dims5()?;
        let x = if self.temporal_stride > 1 {
            let idx: Vec<u32> = (0..t).step_by(self.temporal_stride).map(|i| i as u32).collect();
            let idx = Tensor::from_vec(idx, (t + self.temporal_stride - 1) / self.temporal_stride, x.device())?;
            x.index_select(&idx, 2)?
        } else {
            x.clone()
        };
        let (_, _, nt, _, _) = x.dims5()?;
        let flat = x.transpose(1, 2)?.reshape((b * nt, c, h, w))?;
        let out = self.conv.forward(&flat)?;
        let (_, oc, oh, ow) = out.dims4()?;
        Ok(out.reshape((b, nt, oc, oh, ow))?.transpose(1, 2)?.contiguous()?)
    }
}

struct BasicBlock3d {
    conv1: Conv2Plus1d,
    bn1: Bn,
    conv2: Conv2Plus1d,
    bn2: Bn,
    downsample: Option<(Downsample3d, Bn)>,
}

impl BasicBlock3d {
    fn new(in_c: usize, out_c: usize, stride: usize, trainable: bool, vb: VarBuilder) -> Result<Self> {
        // Both convolutions in a block share the midplane width derived from
        // the block's (in, out) pair, matching the reference network.
        let mid = midplanes(in_c, out_c, 3, 3).max(1);
        let conv1 = Conv2Plus1d::new(in_c, out_c, mid, stride, stride, trainable, vb.pp("conv1"))?;
        let bn1 = Bn::new(out_c, trainable, vb.pp("bn1"))?;
        let conv2 = Conv2Plus1d::new(out_c, out_c, mid, 1, 1, trainable, vb.pp("conv2"))?;
        let bn2 = Bn::new(out_c, trainable, vb.pp("bn2"))?;
        let downsample = if stride != 1 || in_c != out_c {
            let conv = Downsample3d::new(in_c, out_c, stride, stride, vb.pp("downsample.conv"))?;
            let bn = Bn::new(out_c, trainable, vb.pp("downsample.bn"))?;
            Some((conv, bn))
        } else {
            None
        };
        Ok(Self { conv1, bn1, conv2, bn2, downsample })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut out = self.bn1.forward(&self.conv1.forward(x, train)?, train)?.relu()?;
        out = self.bn2.forward(&self.conv2.forward(&out, train)?, train)?;
        let identity = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((out + identity)?.relu()?)
    }
}

/// Stem: 1 x 7 x 7 spatial convolution (stride 1,2,2) into a 3 x 1 x 1
/// temporal convolution, each followed by batch norm and ReLU.
struct Stem {
    spatial: SpatialConv,
    bn1: Bn,
    temporal: TemporalConv,
    bn2: Bn,
}

impl Stem {
    fn new(out_c: usize, trainable: bool, vb: VarBuilder) -> Result<Self> {
        // Full-width reference uses 45 intermediate channels; scale with width.
        let mid = ((45 * out_c + 32) / 64).max(1);
        let spatial = SpatialConv::new(3, mid, 7, 2, 3, vb.pp("spatial"))?;
        let bn1 = Bn::new(mid, trainable, vb.pp("bn1"))?;
        let temporal = TemporalConv::new(mid, out_c, 3, 1, 1, vb.pp("temporal"))?;
        let bn2 = Bn::new(out_c, trainable, vb.pp("bn2"))?;
        Ok(Self { spatial, bn1, temporal, bn2 })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, c, t, h, w) = x.dims5()?;
        let flat = x.transpose(1, 2)?.reshape((b * t, c, h, w))?;
        let s = self.spatial.conv.forward(&flat)?;
        let s = self.bn1.forward(&s, train)?.relu()?;
        let (_, mc, mh, mw) = s.dims4()?;
        let s = s.reshape((b, t, mc, mh, mw))?.transpose(1, 2)?.contiguous()?;
        let out = self.temporal.forward(&s)?;
        Ok(self.bn2.forward(&out, train)?.relu()?)
    }
}

pub struct VideoResNet {
    stem: Stem,
    stages: Vec<Vec<BasicBlock3d>>,
    feature_dim: usize,
}

impl VideoResNet {
    pub fn new(
        cfg: &BackboneConfig,
        stem_trainable: bool,
        stage_trainable: [bool; 4],
        vb: VarBuilder,
    ) -> Result<Self> {
        let stem = Stem::new(cfg.stem_channels, stem_trainable, vb.pp("stem"))?;
        let mut stages = Vec::with_capacity(4);
        let mut in_c = cfg.stem_channels;
        for (stage_idx, (&out_c, &blocks)) in cfg
            .stage_channels
            .iter()
            .zip(cfg.blocks_per_stage.iter())
            .enumerate()
        {
            let stage_vb = vb.pp(format!("layer{}", stage_idx + 1));
            let mut stage = Vec::with_capacity(blocks);
            for block_idx in 0..blocks {
                let stride = if stage_idx > 0 && block_idx == 0 { 2 } else { 1 };
                stage.push(BasicBlock3d::new(
                    in_c,
                    out_c,
                    stride,
                    stage_trainable[stage_idx],
                    stage_vb.pp(block_idx.to_string()),
                )?);
                in_c = out_c;
            }
            stages.push(stage);
        }
        Ok(Self { stem, stages, feature_dim: cfg.stage_channels[3] })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// (B, 3, T, H, W) -> (B, F).
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut out = self.stem.forward(x, train)?;
        for stage in &self.stages {
            for block in stage {
                out = block.forward(&out, train)?;
            }
        }
        global_avg_pool(&out)
    }
}
