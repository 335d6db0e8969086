//! Model-ready batches out of stored clips: temporal window sampling, spatial
//! augmentation, normalization, and collation.
//!
//! Both the video and the single-image pipelines read the same clip storage;
//! only the sampling and collation differ. All randomness flows from explicit
//! seeds: a (global seed, epoch, sample index) triple fully determines every
//! augmentation draw, and augmentation draws are made once per clip so that
//! all frames of a clip get the same crop window and flip state.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdataset::{load_clip_frames, ClipEntry, DatasetManifest, Split};
use crate::trackio::Label;

/// Number of frames fed to sequence models.
pub const DEFAULT_NUM_FRAMES: usize = 8;
/// Clip window length in seconds that frames are sampled from.
pub const CLIP_WINDOW_SECONDS: f64 = 0.5;

/// Tensor-shape contract for one batch: B x C x T x H x W for sequence
/// models, B x C x H x W (no T) for the image model, F latent features out of
/// the backbone, O output classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch: usize,
    pub channels: usize,
    pub timestamps: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub features: usize,
    pub classes: usize,
}

impl BatchSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.batch == 0 || self.height == 0 || self.width == 0 || self.features == 0 {
            return Err("all BatchSpec dims must be positive".into());
        }
        if self.channels != 3 {
            return Err(format!("channels must be 3, got {}", self.channels));
        }
        if self.classes != 2 {
            return Err(format!("classes must be 2, got {}", self.classes));
        }
        if self.timestamps == Some(0) {
            return Err("timestamps must be positive when present".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormVariant {
    Video,
    Image,
}

/// Per-channel standardization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub variant: NormVariant,
}

impl NormalizationStats {
    pub fn video() -> Self {
        Self {
            mean: [0.45, 0.45, 0.45],
            std: [0.225, 0.225, 0.225],
            variant: NormVariant::Video,
        }
    }

    pub fn image() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            variant: NormVariant::Image,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(format!("std must be positive componentwise, got {:?}", self.std));
        }
        Ok(())
    }
}

/// One frame in planar C x H x W float layout, values normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ChwFrame {
    pub data: Vec<f32>,
    pub height: usize,
    pub width: usize,
}

impl ChwFrame {
    /// Converts 8-bit RGB to planar floats in [0, 1].
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0f32; 3 * h * w];
        for (y, x, px) in img.enumerate_pixels().map(|(x, y, p)| (y as usize, x as usize, p)) {
            for c in 0..3 {
                data[c * h * w + y * w + x] = px.0[c] as f32 / 255.0;
            }
        }
        Self { data, height: h, width: w }
    }

    pub fn normalize(&mut self, stats: &NormalizationStats) {
        let plane = self.height * self.width;
        for c in 0..3 {
            let (m, s) = (stats.mean[c], stats.std[c]);
            for v in &mut self.data[c * plane..(c + 1) * plane] {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn denormalize(&mut self, stats: &NormalizationStats) {
        let plane = self.height * self.width;
        for c in 0..3 {
            let (m, s) = (stats.mean[c], stats.std[c]);
            for v in &mut self.data[c * plane..(c + 1) * plane] {
                *v = *v * s + m;
            }
        }
    }
}

/// Spatial pipeline configuration. `resize_min ..= resize_max` is the random
/// short-side range for training; evaluation resizes the short side straight
/// to `input_size` and center-crops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub input_size: u32,
    pub resize_min: u32,
    pub resize_max: u32,
    pub hflip_prob: f64,
    pub stats: NormalizationStats,
}

impl TransformConfig {
    pub fn video() -> Self {
        Self {
            input_size: 224,
            resize_min: 250,
            resize_max: 320,
            hflip_prob: 0.5,
            stats: NormalizationStats::video(),
        }
    }

    pub fn image() -> Self {
        Self {
            stats: NormalizationStats::image(),
            ..Self::video()
        }
    }

    /// Same pipeline scaled down to a smaller input resolution, for
    /// desk-scale experiments.
    pub fn scaled_to(input_size: u32, stats: NormalizationStats) -> Self {
        let scale = |v: u32| ((v as f64 * input_size as f64 / 224.0).round() as u32).max(input_size);
        Self {
            input_size,
            resize_min: scale(250),
            resize_max: scale(320),
            hflip_prob: 0.5,
            stats,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.stats.validate()?;
        if self.input_size == 0 {
            return Err("input_size must be positive".into());
        }
        if self.resize_min < self.input_size || self.resize_max < self.resize_min {
            return Err(format!(
                "need input_size <= resize_min <= resize_max, got {} / {} / {}",
                self.input_size, self.resize_min, self.resize_max
            ));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(format!("hflip_prob out of [0,1]: {}", self.hflip_prob));
        }
        Ok(())
    }
}

/// Picks the ordered frame indices for one training sample.
///
/// A window of `max(round(0.5 * fps), num_frames)` frames (clamped to the
/// clip) is placed at a uniformly random start, and `num_frames` distinct
/// indices are drawn without replacement from it, sorted. Clips shorter than
/// `num_frames` are padded by repeating the last index.
pub fn sample_clip_window(
    clip_length: usize,
    fps: f64,
    num_frames: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    assert!(clip_length >= 1 && num_frames >= 1);
    if clip_length < num_frames {
        let mut idx: Vec<usize> = (0..clip_length).collect();
        idx.resize(num_frames, clip_length - 1);
        return idx;
    }
    let window = window_len(clip_length, fps, num_frames);
    let start = rng.gen_range(0..=clip_length - window);
    // Partial Fisher-Yates over the window offsets.
    let mut offsets: Vec<usize> = (0..window).collect();
    for i in 0..num_frames {
        let j = rng.gen_range(i..window);
        offsets.swap(i, j);
    }
    let mut picked: Vec<usize> = offsets[..num_frames].iter().map(|o| start + o).collect();
    picked.sort_unstable();
    picked
}

/// Deterministic evaluation counterpart: a centered window with evenly spaced
/// indices.
pub fn center_clip_window(clip_length: usize, fps: f64, num_frames: usize) -> Vec<usize> {
    assert!(clip_length >= 1 && num_frames >= 1);
    if clip_length < num_frames {
        let mut idx: Vec<usize> = (0..clip_length).collect();
        idx.resize(num_frames, clip_length - 1);
        return idx;
    }
    let window = window_len(clip_length, fps, num_frames);
    let start = (clip_length - window) / 2;
    if num_frames == 1 {
        return vec![start + window / 2];
    }
    (0..num_frames)
        .map(|i| start + (i * (window - 1)) / (num_frames - 1))
        .collect()
}

fn window_len(clip_length: usize, fps: f64, num_frames: usize) -> usize {
    let half_second = (CLIP_WINDOW_SECONDS * fps).round() as usize;
    half_second.max(num_frames).min(clip_length)
}

/// Resizes so the short side equals `target`, preserving aspect ratio
/// (bilinear).
pub fn short_side_resize(img: &RgbImage, target: u32) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let short = w.min(h);
    if short == target {
        return img.clone();
    }
    let scale = target as f64 / short as f64;
    let nw = ((w as f64 * scale).round() as u32).max(1);
    let nh = ((h as f64 * scale).round() as u32).max(1);
    image::imageops::resize(img, nw, nh, image::imageops::FilterType::Triangle)
}

fn crop(img: &RgbImage, x: u32, y: u32, size: u32) -> RgbImage {
    image::imageops::crop_imm(img, x, y, size, size).to_image()
}

/// Per-clip augmentation draw, applied identically to every frame.
#[derive(Debug, Clone, Copy)]
struct AugmentDraw {
    short_side: u32,
    crop_frac_x: f64,
    crop_frac_y: f64,
    flip: bool,
}

impl AugmentDraw {
    fn sample(cfg: &TransformConfig, rng: &mut impl Rng) -> Self {
        Self {
            short_side: rng.gen_range(cfg.resize_min..=cfg.resize_max),
            crop_frac_x: rng.gen::<f64>(),
            crop_frac_y: rng.gen::<f64>(),
            flip: rng.gen::<f64>() < cfg.hflip_prob,
        }
    }

    fn apply(&self, frame: &RgbImage, cfg: &TransformConfig) -> ChwFrame {
        let resized = short_side_resize(frame, self.short_side);
        let max_x = resized.width() - cfg.input_size;
        let max_y = resized.height() - cfg.input_size;
        // The same fractional position maps to the same pixel window for all
        // frames of a clip because they share dimensions.
        let x = (self.crop_frac_x * (max_x as f64 + 1.0)).floor().min(max_x as f64) as u32;
        let y = (self.crop_frac_y * (max_y as f64 + 1.0)).floor().min(max_y as f64) as u32;
        let mut out = crop(&resized, x, y, cfg.input_size);
        if self.flip {
            out = image::imageops::flip_horizontal(&out);
        }
        let mut chw = ChwFrame::from_rgb(&out);
        chw.normalize(&cfg.stats);
        chw
    }
}

/// Training-path augmentation for a whole clip: one random short-side resize
/// in `[resize_min, resize_max]`, one random crop window, one flip decision,
/// shared across frames; then normalization.
pub fn train_transform_video(
    frames: &[RgbImage],
    cfg: &TransformConfig,
    rng: &mut impl Rng,
) -> Vec<ChwFrame> {
    assert!(!frames.is_empty());
    let draw = AugmentDraw::sample(cfg, rng);
    frames.iter().map(|f| draw.apply(f, cfg)).collect()
}

/// Evaluation path: short-side resize to `input_size`, center crop, normalize.
pub fn eval_transform_video(frames: &[RgbImage], cfg: &TransformConfig) -> Vec<ChwFrame> {
    frames.iter().map(|f| eval_transform_frame(f, cfg)).collect()
}

/// Single-frame training transform for the image pipeline.
pub fn train_transform_image(
    frame: &RgbImage,
    cfg: &TransformConfig,
    rng: &mut impl Rng,
) -> ChwFrame {
    AugmentDraw::sample(cfg, rng).apply(frame, cfg)
}

pub fn eval_transform_frame(frame: &RgbImage, cfg: &TransformConfig) -> ChwFrame {
    let resized = short_side_resize(frame, cfg.input_size);
    let x = (resized.width() - cfg.input_size) / 2;
    let y = (resized.height() - cfg.input_size) / 2;
    let mut chw = ChwFrame::from_rgb(&crop(&resized, x, y, cfg.input_size));
    chw.normalize(&cfg.stats);
    chw
}

/// One sample before collation: the transformed frames of a clip (exactly one
/// frame in image mode) plus its label.
#[derive(Debug, Clone)]
pub struct ClipSample {
    pub clip_id: String,
    pub label: Label,
    pub frames: Vec<ChwFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollateMode {
    Sequence,
    Image,
}

/// A collated batch: pixels as B x C x T x H x W (sequence) or B x C x H x W
/// (image), plus aligned labels and clip ids.
pub struct SampledClipBatch {
    pub pixels: Tensor,
    pub labels: Vec<Label>,
    pub clip_ids: Vec<String>,
}

impl SampledClipBatch {
    /// Class indices as a u32 tensor of shape (B,).
    pub fn label_tensor(&self, device: &Device) -> Result<Tensor> {
        let idx: Vec<u32> = self.labels.iter().map(|l| l.index() as u32).collect();
        Ok(Tensor::from_vec(idx, self.labels.len(), device)?)
    }
}

/// Stacks samples into one pixel tensor. Sequence mode requires a uniform
/// frame count per sample; image mode requires exactly one frame per sample.
pub fn collate(samples: &[ClipSample], mode: CollateMode, device: &Device) -> Result<SampledClipBatch> {
    if samples.is_empty() {
        return Err(Error::ShapeMismatch("cannot collate an empty batch".into()));
    }
    let (h, w) = (samples[0].frames[0].height, samples[0].frames[0].width);
    for s in samples {
        if s.frames.is_empty() {
            return Err(Error::ShapeMismatch(format!("sample {} has no frames", s.clip_id)));
        }
        for f in &s.frames {
            if (f.height, f.width) != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "frame size {}x{} in sample {} differs from {}x{}",
                    f.width, f.height, s.clip_id, w, h
                )));
            }
        }
    }
    let b = samples.len();
    let pixels = match mode {
        CollateMode::Sequence => {
            let t = samples[0].frames.len();
            if samples.iter().any(|s| s.frames.len() != t) {
                return Err(Error::ShapeMismatch("unequal frame counts across samples".into()));
            }
            let mut data = Vec::with_capacity(b * 3 * t * h * w);
            // Target layout is (B, C, T, H, W); frames arrive as (T, C, H, W).
            let plane = h * w;
            for s in samples {
                for c in 0..3 {
                    for f in &s.frames {
                        data.extend_from_slice(&f.data[c * plane..(c + 1) * plane]);
                    }
                }
            }
            Tensor::from_vec(data, (b, 3, t, h, w), device)?
        }
        CollateMode::Image => {
            if samples.iter().any(|s| s.frames.len() != 1) {
                return Err(Error::ShapeMismatch(
                    "image mode expects exactly one frame per sample".into(),
                ));
            }
            let mut data = Vec::with_capacity(b * 3 * h * w);
            for s in samples {
                data.extend_from_slice(&s.frames[0].data);
            }
            Tensor::from_vec(data, (b, 3, h, w), device)?
        }
    };
    Ok(SampledClipBatch {
        pixels,
        labels: samples.iter().map(|s| s.label).collect(),
        clip_ids: samples.iter().map(|s| s.clip_id.clone()).collect(),
    })
}

/// Read access to an exported dataset tree.
pub struct ClipDataset {
    root: PathBuf,
    pub manifest: DatasetManifest,
}

impl ClipDataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = DatasetManifest::load(&root.join("manifest.json"))?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn clip_dir(&self, entry: &ClipEntry) -> PathBuf {
        self.root.join(&entry.rel_path)
    }

    pub fn load_frames(&self, entry: &ClipEntry) -> Result<Vec<RgbImage>> {
        load_clip_frames(&self.clip_dir(entry), entry.frame_count as usize)
    }

    pub fn clip_fps(&self, entry: &ClipEntry) -> Result<f64> {
        Ok(crate::seqdataset::load_clip_meta(&self.clip_dir(entry))?.fps)
    }
}

/// Deterministic per-sample seed derivation (splitmix64 chain).
pub fn derive_seed(global_seed: u64, epoch: u64, sample_index: u64) -> u64 {
    let mut z = global_seed;
    for salt in [epoch.wrapping_add(0x9e37_79b9_7f4a_7c15), sample_index] {
        z = z.wrapping_add(salt).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Reference to one trainable sample: a clip (sequence mode) or one frame of a
/// clip (image mode), with its derived RNG seed.
#[derive(Debug, Clone, Copy)]
pub struct SampleKey {
    pub clip_idx: usize,
    pub frame_idx: Option<usize>,
    pub seed: u64,
}

/// Builds the shuffled batch plan for one epoch over `split`.
pub fn epoch_plan(
    ds: &ClipDataset,
    split: Split,
    mode: CollateMode,
    batch_size: usize,
    global_seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Vec<Vec<SampleKey>> {
    assert!(batch_size >= 1);
    let clip_indices: Vec<usize> = ds
        .manifest
        .clips
        .iter()
        .enumerate()
        .filter(|(_, c)| c.split == split)
        .map(|(i, _)| i)
        .collect();
    let mut samples: Vec<(usize, Option<usize>)> = match mode {
        CollateMode::Sequence => clip_indices.into_iter().map(|i| (i, None)).collect(),
        CollateMode::Image => clip_indices
            .into_iter()
            .flat_map(|i| {
                (0..ds.manifest.clips[i].frame_count as usize).map(move |f| (i, Some(f)))
            })
            .collect(),
    };
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(global_seed, epoch, u64::MAX));
        // Fisher-Yates.
        for i in (1..samples.len()).rev() {
            let j = rng.gen_range(0..=i);
            samples.swap(i, j);
        }
    }
    samples
        .chunks(batch_size)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .map(|(k, &(clip_idx, frame_idx))| SampleKey {
                    clip_idx,
                    frame_idx,
                    seed: derive_seed(global_seed, epoch, (clip_idx as u64) << 20 | k as u64),
                })
                .collect()
        })
        .collect()
}

/// Materializes one batch from a plan chunk. `train` selects augmented vs
/// deterministic center-window sampling.
pub fn load_batch(
    ds: &ClipDataset,
    keys: &[SampleKey],
    mode: CollateMode,
    cfg: &TransformConfig,
    num_frames: usize,
    train: bool,
    device: &Device,
) -> Result<SampledClipBatch> {
    let mut samples = Vec::with_capacity(keys.len());
    for key in keys {
        let entry = &ds.manifest.clips[key.clip_idx];
        let frames = ds.load_frames(entry)?;
        let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
        let sample = match (mode, key.frame_idx) {
            (CollateMode::Sequence, _) => {
                let fps = ds.clip_fps(entry)?;
                let indices = if train {
                    sample_clip_window(frames.len(), fps, num_frames, &mut rng)
                } else {
                    center_clip_window(frames.len(), fps, num_frames)
                };
                let picked: Vec<RgbImage> =
                    indices.iter().map(|&i| frames[i].clone()).collect();
                let out = if train {
                    train_transform_video(&picked, cfg, &mut rng)
                } else {
                    eval_transform_video(&picked, cfg)
                };
                ClipSample {
                    clip_id: entry.clip_id.clone(),
                    label: entry.label,
                    frames: out,
                }
            }
            (CollateMode::Image, frame_idx) => {
                let idx = frame_idx.unwrap_or(0).min(frames.len() - 1);
                let out = if train {
                    train_transform_image(&frames[idx], cfg, &mut rng)
                } else {
                    eval_transform_frame(&frames[idx], cfg)
                };
                ClipSample {
                    clip_id: format!("{}#{}", entry.clip_id, idx),
                    label: entry.label,
                    frames: vec![out],
                }
            }
        };
        samples.push(sample);
    }
    collate(&samples, mode, device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn window_fps30_len60() {
        let mut r = rng(0);
        for _ in 0..50 {
            let idx = sample_clip_window(60, 30.0, 8, &mut r);
            assert_eq!(idx.len(), 8);
            for pair in idx.windows(2) {
                assert!(pair[1] > pair[0], "indices must be strictly increasing: {idx:?}");
            }
            // Window length round(0.5 * 30) = 15.
            assert!(idx[7] - idx[0] < 15, "{idx:?}");
            assert!(idx[7] < 60);
        }
    }

    #[test]
    fn window_short_clip_pads_with_last_index() {
        let mut r = rng(1);
        let idx = sample_clip_window(5, 30.0, 8, &mut r);
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 4, 4, 4]);
        assert_eq!(center_clip_window(5, 30.0, 8), vec![0, 1, 2, 3, 4, 4, 4, 4]);
    }

    #[test]
    fn window_deterministic_under_seed() {
        let a = sample_clip_window(100, 25.0, 8, &mut rng(42));
        let b = sample_clip_window(100, 25.0, 8, &mut rng(42));
        assert_eq!(a, b);
    }

    #[test]
    fn window_no_larger_than_needed_for_low_fps() {
        // round(0.5 * 10) = 5 < 8 frames, so the window grows to 8.
        let mut r = rng(3);
        let idx = sample_clip_window(50, 10.0, 8, &mut r);
        assert_eq!(idx.len(), 8);
        assert_eq!(idx[7] - idx[0], 7); // window is exactly the 8 frames
    }

    #[test]
    fn center_window_is_deterministic_and_spread() {
        let idx = center_clip_window(60, 30.0, 8);
        assert_eq!(idx, center_clip_window(60, 30.0, 8));
        assert_eq!(idx.len(), 8);
        // Centered 15-frame window inside 60 frames starts at 22.
        assert_eq!(idx[0], 22);
        assert_eq!(*idx.last().unwrap(), 36);
    }

    #[test]
    fn normalization_roundtrip() {
        let img = RgbImage::from_fn(8, 6, |x, y| Rgb([x as u8 * 10, y as u8 * 20, 128]));
        let orig = ChwFrame::from_rgb(&img);
        let stats = NormalizationStats::video();
        let mut f = orig.clone();
        f.normalize(&stats);
        f.denormalize(&stats);
        for (a, b) in f.data.iter().zip(&orig.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gray_mean_frame_normalizes_to_zero() {
        let stats = NormalizationStats::image();
        let img = RgbImage::from_pixel(4, 4, Rgb([124, 116, 104])); // ~mean * 255
        let mut f = ChwFrame::from_rgb(&img);
        f.normalize(&stats);
        for v in &f.data {
            assert!(v.abs() < 0.02, "{v}");
        }
    }

    #[test]
    fn flip_is_involution() {
        let img = RgbImage::from_fn(9, 5, |x, y| Rgb([x as u8, y as u8, (x * y) as u8]));
        let twice = image::imageops::flip_horizontal(&image::imageops::flip_horizontal(&img));
        assert_eq!(img, twice);
    }

    fn test_cfg(size: u32) -> TransformConfig {
        TransformConfig::scaled_to(size, NormalizationStats::video())
    }

    #[test]
    fn train_transform_outputs_input_size() {
        let cfg = TransformConfig::video();
        cfg.validate().unwrap();
        let frames = vec![RgbImage::from_pixel(100, 60, Rgb([50, 100, 150])); 3];
        let out = train_transform_video(&frames, &cfg, &mut rng(5));
        assert_eq!(out.len(), 3);
        for f in &out {
            assert_eq!((f.height, f.width), (224, 224));
        }
    }

    #[test]
    fn eval_transform_deterministic() {
        let cfg = test_cfg(32);
        let frame = RgbImage::from_fn(50, 40, |x, y| Rgb([x as u8, y as u8, 0]));
        let a = eval_transform_frame(&frame, &cfg);
        let b = eval_transform_frame(&frame, &cfg);
        assert_eq!(a, b);
        assert_eq!((a.height, a.width), (32, 32));
    }

    #[test]
    fn temporal_consistency_identical_frames_identical_outputs() {
        let cfg = test_cfg(32);
        let frame = RgbImage::from_fn(60, 45, |x, y| Rgb([x as u8 * 3, y as u8 * 5, 9]));
        let frames = vec![frame; 8];
        for seed in 0..20 {
            let out = train_transform_video(&frames, &cfg, &mut rng(seed));
            for f in &out[1..] {
                assert_eq!(f, &out[0]);
            }
        }
    }

    #[test]
    fn train_transform_seed_reproducible() {
        let cfg = test_cfg(32);
        let frames: Vec<RgbImage> = (0..4)
            .map(|i| RgbImage::from_fn(60, 45, |x, y| Rgb([x as u8, y as u8, i as u8 * 30])))
            .collect();
        let a = train_transform_video(&frames, &cfg, &mut rng(77));
        let b = train_transform_video(&frames, &cfg, &mut rng(77));
        assert_eq!(a, b);
    }

    #[test]
    fn prenormalization_values_in_unit_interval() {
        let img = RgbImage::from_fn(10, 10, |x, y| Rgb([x as u8 * 25, y as u8 * 25, 255]));
        let f = ChwFrame::from_rgb(&img);
        assert!(f.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let mut n = f.clone();
        n.normalize(&NormalizationStats::video());
        assert!(n.data.iter().all(|v| v.is_finite()));
    }

    fn sample(id: &str, t: usize, hw: usize) -> ClipSample {
        ClipSample {
            clip_id: id.into(),
            label: Label::Drone,
            frames: vec![
                ChwFrame {
                    data: vec![0.5; 3 * hw * hw],
                    height: hw,
                    width: hw,
                };
                t
            ],
        }
    }

    #[test]
    fn collate_sequence_shape() {
        let device = Device::Cpu;
        let samples: Vec<ClipSample> = (0..8).map(|i| sample(&format!("c{i}"), 8, 16)).collect();
        let batch = collate(&samples, CollateMode::Sequence, &device).unwrap();
        assert_eq!(batch.pixels.dims(), &[8, 3, 8, 16, 16]);
        assert_eq!(batch.labels.len(), 8);
    }

    #[test]
    fn collate_image_shape() {
        let device = Device::Cpu;
        let samples: Vec<ClipSample> = (0..128).map(|i| sample(&format!("f{i}"), 1, 8)).collect();
        let batch = collate(&samples, CollateMode::Image, &device).unwrap();
        assert_eq!(batch.pixels.dims(), &[128, 3, 8, 8]);
    }

    #[test]
    fn collate_empty_errors() {
        assert!(collate(&[], CollateMode::Sequence, &Device::Cpu).is_err());
    }

    #[test]
    fn collate_mismatched_shapes_error() {
        let samples = vec![sample("a", 8, 16), sample("b", 7, 16)];
        assert!(collate(&samples, CollateMode::Sequence, &Device::Cpu).is_err());
        let samples = vec![sample("a", 1, 16), sample("b", 1, 8)];
        assert!(collate(&samples, CollateMode::Image, &Device::Cpu).is_err());
    }

    #[test]
    fn collate_sequence_layout_is_bcthw() {
        // One sample, 2 frames, 1x1 spatial: layout must interleave as C-major
        // over T.
        let f0 = ChwFrame { data: vec![1.0, 2.0, 3.0], height: 1, width: 1 };
        let f1 = ChwFrame { data: vec![4.0, 5.0, 6.0], height: 1, width: 1 };
        let s = ClipSample {
            clip_id: "c".into(),
            label: Label::Bird,
            frames: vec![f0, f1],
        };
        let batch = collate(&[s], CollateMode::Sequence, &Device::Cpu).unwrap();
        let flat: Vec<f32> = batch.pixels.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(flat, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn derive_seed_varies_per_component() {
        let base = derive_seed(1, 2, 3);
        assert_ne!(base, derive_seed(2, 2, 3));
        assert_ne!(base, derive_seed(1, 3, 3));
        assert_ne!(base, derive_seed(1, 2, 4));
        assert_eq!(base, derive_seed(1, 2, 3));
    }
}
