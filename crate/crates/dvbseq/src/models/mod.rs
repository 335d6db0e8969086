//! The five classifier modalities and their parameter accounting.
//!
//! Type 1 is a fully convolutional (2+1)D video network over B x C x T x H x W.
//! Type 2 applies a shared 2D residual backbone per timestep and fuses the
//! B x T x F features with an LSTM, MLP, or transformer neck. The single-image
//! baseline is the bare 2D backbone with a linear head.

pub mod layers;
pub mod neck;
pub mod r2plus1d;
pub mod resnet;

use std::fmt;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{Linear, Module, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use neck::{Neck, NeckKind, NeckSpec};
use r2plus1d::VideoResNet;
use resnet::ResNet2d;

pub const NUM_CLASSES: usize = 2;
const FAMILY_NAMES: &str =
    "image_resnet18, r2plus1d, resnet18_lstm, resnet18_mlp, resnet18_transformer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    ImageResnet18,
    R2plus1d,
    Resnet18Lstm,
    Resnet18Mlp,
    Resnet18Transformer,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        ModelFamily::ImageResnet18,
        ModelFamily::R2plus1d,
        ModelFamily::Resnet18Lstm,
        ModelFamily::Resnet18Mlp,
        ModelFamily::Resnet18Transformer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::ImageResnet18 => "image_resnet18",
            ModelFamily::R2plus1d => "r2plus1d",
            ModelFamily::Resnet18Lstm => "resnet18_lstm",
            ModelFamily::Resnet18Mlp => "resnet18_mlp",
            ModelFamily::Resnet18Transformer => "resnet18_transformer",
        }
    }

    /// Whether the input carries a time axis (B, C, T, H, W).
    pub fn is_sequence(self) -> bool {
        !matches!(self, ModelFamily::ImageResnet18)
    }

    pub fn neck_kind(self) -> Option<NeckKind> {
        match self {
            ModelFamily::Resnet18Lstm => Some(NeckKind::Lstm),
            ModelFamily::Resnet18Mlp => Some(NeckKind::Mlp),
            ModelFamily::Resnet18Transformer => Some(NeckKind::Transformer),
            _ => None,
        }
    }

    /// Number of backbone blocks the fine-tuning recipe unfreezes.
    pub fn fine_tune_blocks(self) -> usize {
        match self {
            ModelFamily::R2plus1d => 1,
            _ => 2,
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelFamily> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string(), FAMILY_NAMES))
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Residual backbone widths. The full-size configuration is the 18-layer
/// recipe (stem 64, stages 64/128/256/512, two blocks each, F = 512).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
}

impl BackboneConfig {
    pub fn full18() -> Self {
        Self {
            stem_channels: 64,
            stage_channels: [64, 128, 256, 512],
            blocks_per_stage: [2, 2, 2, 2],
        }
    }

    /// Narrow single-block variant for CPU-scale tests and experiments.
    pub fn tiny(base: usize) -> Self {
        Self {
            stem_channels: base,
            stage_channels: [base, base * 2, base * 4, base * 8],
            blocks_per_stage: [1, 1, 1, 1],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.stage_channels[3]
    }
}

/// Which backbone residual stages receive gradients. Blocks are counted from
/// the output end: 0 freezes the whole backbone (transfer learning), 2
/// unfreezes stages 3-4, and any value above 4 also unfreezes the stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePolicy {
    pub unfrozen_backbone_blocks: usize,
}

impl FreezePolicy {
    pub fn transfer() -> Self {
        Self { unfrozen_backbone_blocks: 0 }
    }

    pub fn fine_tune(family: ModelFamily) -> Self {
        Self { unfrozen_backbone_blocks: family.fine_tune_blocks() }
    }

    pub fn all_unfrozen() -> Self {
        Self { unfrozen_backbone_blocks: 5 }
    }

    fn stage_trainable(&self, stage: usize) -> bool {
        debug_assert!((1..=4).contains(&stage));
        stage + self.unfrozen_backbone_blocks > 4
    }

    fn stem_trainable(&self) -> bool {
        self.unfrozen_backbone_blocks >= 5
    }

    fn stage_flags(&self) -> [bool; 4] {
        [1, 2, 3, 4].map(|s| self.stage_trainable(s))
    }

    /// Whether the named parameter receives gradient updates. Necks and heads
    /// are always trainable.
    pub fn param_trainable(&self, name: &str) -> bool {
        if let Some(rest) = name.strip_prefix("backbone.") {
            if rest.starts_with("stem.") {
                return self.stem_trainable();
            }
            for stage in 1..=4usize {
                if rest.starts_with(&format!("layer{stage}.")) {
                    return self.stage_trainable(stage);
                }
            }
            return self.stem_trainable();
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub backbone: BackboneConfig,
    pub neck: Option<NeckSpec>,
    /// Timestamps per sample for sequence families.
    pub num_frames: usize,
    /// Optional externally supplied pretrained weights (checkpoint format);
    /// random initialization is the fallback.
    pub pretrained: Option<PathBuf>,
}

impl ModelSpec {
    /// Full-size specification of a family, as trained in the paper's recipe.
    pub fn full(family: ModelFamily) -> Self {
        Self {
            family,
            backbone: BackboneConfig::full18(),
            neck: family.neck_kind().map(|kind| match kind {
                NeckKind::Lstm => NeckSpec::lstm(),
                NeckKind::Mlp => NeckSpec::mlp(),
                NeckKind::Transformer => NeckSpec::transformer(),
            }),
            num_frames: 8,
            pretrained: None,
        }
    }

    /// Reduced-width variant for CPU-scale work.
    pub fn tiny(family: ModelFamily, base: usize) -> Self {
        let backbone = BackboneConfig::tiny(base);
        Self {
            family,
            backbone,
            neck: family
                .neck_kind()
                .map(|kind| NeckSpec::scaled(kind, backbone.feature_dim())),
            num_frames: 8,
            pretrained: None,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.family.neck_kind().is_some() != self.neck.is_some() {
            return Err(format!(
                "family {} {} a neck spec",
                self.family,
                if self.neck.is_some() { "does not take" } else { "requires" }
            ));
        }
        if let (Some(spec), Some(kind)) = (&self.neck, self.family.neck_kind()) {
            if spec.kind != kind {
                return Err(format!("neck kind {:?} does not match family {}", spec.kind, self.family));
            }
            spec.validate()?;
        }
        if self.family.is_sequence() && self.num_frames == 0 {
            return Err("num_frames must be >= 1".into());
        }
        Ok(())
    }
}

enum Net {
    Image { backbone: ResNet2d },
    Video { backbone: VideoResNet },
    Seq2d { backbone: ResNet2d, neck: Neck },
}

/// A built classifier: backbone (+ optional neck) + linear head, together
/// with its parameter map and freeze policy.
pub struct Model {
    pub spec: ModelSpec,
    pub policy: FreezePolicy,
    pub device: Device,
    pub dtype: DType,
    varmap: VarMap,
    net: Net,
    head: Linear,
}

/// Builds a model per spec, applies the freeze policy, deterministically
/// initializes all parameters from the seed, then overlays pretrained weights
/// when the spec names them.
pub fn build_model(
    spec: &ModelSpec,
    policy: FreezePolicy,
    device: &Device,
    dtype: DType,
    seed: u64,
) -> Result<Model> {
    spec.validate().map_err(|msg| Error::Invalid { what: "model spec", msg })?;
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, dtype, device);
    let backbone_vb = vb.pp("backbone");
    let stem_t = policy.stem_trainable();
    let stage_t = policy.stage_flags();
    let (net, fused_dim) = match spec.family {
        ModelFamily::ImageResnet18 => {
            let backbone = ResNet2d::new(&spec.backbone, stem_t, stage_t, backbone_vb)?;
            let dim = backbone.feature_dim();
            (Net::Image { backbone }, dim)
        }
        ModelFamily::R2plus1d => {
            let backbone = VideoResNet::new(&spec.backbone, stem_t, stage_t, backbone_vb)?;
            let dim = backbone.feature_dim();
            (Net::Video { backbone }, dim)
        }
        _ => {
            let backbone = ResNet2d::new(&spec.backbone, stem_t, stage_t, backbone_vb)?;
            let neck = Neck::new(
                spec.neck.as_ref().expect("validated"),
                backbone.feature_dim(),
                spec.num_frames,
                vb.pp("neck"),
            )?;
            let dim = neck.out_dim();
            (Net::Seq2d { backbone, neck }, dim)
        }
    };
    let head = candle_nn::linear(fused_dim, NUM_CLASSES, vb.pp("head"))?;
    layers::init_params(&varmap, seed)?;
    let model = Model {
        spec: spec.clone(),
        policy,
        device: device.clone(),
        dtype,
        varmap,
        net,
        head,
    };
    if let Some(path) = &spec.pretrained {
        model.load_weights(path)?;
    }
    Ok(model)
}

impl Model {
    /// Class scores. Input is (B, C, H, W) for the image family and
    /// (B, C, T, H, W) for sequence families.
    pub fn forward(&self, pixels: &Tensor, train: bool) -> Result<Tensor> {
        let fused = match &self.net {
            Net::Image { backbone } => {
                let (_b, c, _h, _w) = pixels.dims4().map_err(|_| {
                    Error::ShapeMismatch(format!(
                        "image family expects (B, C, H, W), got {:?}",
                        pixels.dims()
                    ))
                })?;
                check_channels(c)?;
                backbone.forward(pixels, train)?
            }
            Net::Video { backbone } => {
                let (_b, c, _t, _h, _w) = dims5(pixels)?;
                check_channels(c)?;
                backbone.forward(pixels, train)?
            }
            Net::Seq2d { backbone, neck } => {
                let (b, c, t, h, w) = dims5(pixels)?;
                check_channels(c)?;
                if t != self.spec.num_frames {
                    return Err(Error::ShapeMismatch(format!(
                        "model built for T={}, got T={t}",
                        self.spec.num_frames
                    )));
                }
                let frames = pixels.transpose(1, 2)?.reshape((b * t, c, h, w))?;
                let feats = backbone.forward(&frames, train)?;
                let f = feats.dims2()?.1;
                neck.forward(&feats.reshape((b, t, f))?)?
            }
        };
        Ok(self.head.forward(&fused)?)
    }

    pub fn count_params(&self) -> ParamReport {
        let mut components: Vec<(String, u64, u64)> = Vec::new();
        let mut prefixes = vec!["backbone.stem".to_string()];
        prefixes.extend((1..=4).map(|i| format!("backbone.layer{i}")));
        if matches!(self.net, Net::Seq2d { .. }) {
            prefixes.push("neck".to_string());
        }
        prefixes.push("head".to_string());
        for prefix in prefixes {
            let total = layers::count_vars(&self.varmap, |n| n.starts_with(&prefix));
            let trainable = layers::count_vars(&self.varmap, |n| {
                n.starts_with(&prefix) && self.policy.param_trainable(n)
            });
            components.push((prefix, total, trainable));
        }
        ParamReport {
            family: self.spec.family,
            unfrozen_backbone_blocks: self.policy.unfrozen_backbone_blocks,
            total_params: components.iter().map(|c| c.1).sum(),
            trainable_params: components.iter().map(|c| c.2).sum(),
            components,
        }
    }

    /// Vars the optimizer may update, per the freeze policy. Running
    /// statistics are buffers, never optimized.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        layers::select_vars(&self.varmap, |n| {
            !n.ends_with("running_mean")
                && !n.ends_with("running_var")
                && self.policy.param_trainable(n)
        })
    }

    /// Every var including buffers, for checkpointing and freeze checks.
    pub fn all_vars(&self) -> Vec<(String, Var)> {
        layers::select_vars(&self.varmap, |_| true)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        self.varmap.save(path)?;
        Ok(())
    }

    pub fn load_weights(&self, path: &Path) -> Result<()> {
        let mut varmap = self.varmap.clone();
        varmap.load(path)?;
        Ok(())
    }
}

fn dims5(t: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    t.dims5().map_err(|_| {
        Error::ShapeMismatch(format!(
            "sequence family expects (B, C, T, H, W), got {:?}",
            t.dims()
        ))
    })
}

fn check_channels(c: usize) -> Result<()> {
    if c != 3 {
        return Err(Error::ShapeMismatch(format!("expected 3 channels, got {c}")));
    }
    Ok(())
}

/// Exact parameter accounting for one built model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamReport {
    pub family: ModelFamily,
    pub unfrozen_backbone_blocks: usize,
    pub total_params: u64,
    pub trainable_params: u64,
    /// (component, total, trainable) triples; totals sum to the model total.
    pub components: Vec<(String, u64, u64)>,
}

impl ParamReport {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "{} (unfrozen backbone blocks: {})\n  total: {}  trainable: {}\n",
            self.family, self.unfrozen_backbone_blocks, self.total_params, self.trainable_params
        );
        for (name, total, trainable) in &self.components {
            out.push_str(&format!("  {name:<18} total {total:>10}  trainable {trainable:>10}\n"));
        }
        out
    }
}
