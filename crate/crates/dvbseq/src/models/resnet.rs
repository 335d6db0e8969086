//! 18-layer style 2D residual backbone with configurable widths, producing a
//! global-average-pooled feature vector.

use candle_core::Tensor;
use candle_nn::{Conv2d, Module, VarBuilder};

use super::layers::{conv2d, global_avg_pool, stem_max_pool, Bn};
use super::BackboneConfig;
use crate::error::Result;

struct BasicBlock {
    conv1: Conv2d,
    bn1: Bn,
    conv2: Conv2d,
    bn2: Bn,
    downsample: Option<(Conv2d, Bn)>,
}

impl BasicBlock {
    fn new(in_c: usize, out_c: usize, stride: usize, trainable: bool, vb: VarBuilder) -> Result<Self> {
        let conv1 = conv2d(in_c, out_c, 3, stride, 1, vb.pp("conv1"))?;
        let bn1 = Bn::new(out_c, trainable, vb.pp("bn1"))?;
        let conv2 = conv2d(out_c, out_c, 3, 1, 1, vb.pp("conv2"))?;
        let bn2 = Bn::new(out_c, trainable, vb.pp("bn2"))?;
        let downsample = if stride != 1 || in_c != out_c {
            let conv = conv2d(in_c, out_c, 1, stride, 0, vb.pp("downsample.conv"))?;
            let bn = Bn::new(out_c, trainable, vb.pp("downsample.bn"))?;
            Some((conv, bn))
        } else {
            None
        };
        Ok(Self { conv1, bn1, conv2, bn2, downsample })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut out = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        out = self.bn2.forward(&self.conv2.forward(&out)?, train)?;
        let identity = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((out + identity)?.relu()?)
    }
}

pub struct ResNet2d {
    stem_conv: Conv2d,
    stem_bn: Bn,
    stages: Vec<Vec<BasicBlock>>,
    feature_dim: usize,
}

impl ResNet2d {
    /// `stage_trainable[k]` controls gradient-era batch-norm behavior for
    /// stage k+1; `stem_trainable` likewise for the stem.
    pub fn new(
        cfg: &BackboneConfig,
        stem_trainable: bool,
        stage_trainable: [bool; 4],
        vb: VarBuilder,
    ) -> Result<Self> {
        let stem_conv = conv2d(3, cfg.stem_channels, 7, 2, 3, vb.pp("stem.conv"))?;
        let stem_bn = Bn::new(cfg.stem_channels, stem_trainable, vb.pp("stem.bn"))?;
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
                stage.push(BasicBlock::new(
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
        Ok(Self {
            stem_conv,
            stem_bn,
            stages,
            feature_dim: cfg.stage_channels[3],
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// (B, 3, H, W) -> (B, F).
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut out = self
            .stem_bn
            .forward(&self.stem_conv.forward(x)?, train)?
            .relu()?;
        out = stem_max_pool(&out)?;
        for stage in &self.stages {
            for block in stage {
                out = block.forward(&out, train)?;
            }
        }
        global_avg_pool(&out)
    }
}
