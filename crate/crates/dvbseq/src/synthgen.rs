//! Synthetic labeled clip datasets whose two classes are separable only
//! through temporal information.
//!
//! Each clip shows one bright blob on a noisy background. In "bird" clips the
//! blob's horizontal extent oscillates sinusoidally at a per-clip flap
//! frequency; in "drone" clips the extent is modulated by the sine of an
//! i.i.d. uniform phase each frame. Both are `a0 * (1 + m * sin(phase))` with
//! the same modulation depth, so the per-frame extent distribution (arcsine)
//! is identical across classes — only the temporal autocorrelation differs.
//! All other appearance factors (size, brightness, drift, noise) are drawn
//! from the same distributions for both classes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clipsampling::derive_seed;
use crate::error::Result;
use crate::seqdataset::{build_dataset, DatasetManifest, Split, DEFAULT_GAP_THRESHOLD};
use crate::trackio::{BoundingBox, BoxSource, Label, MemoryFrameStore, Track, VideoFrameStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train_clips_per_class: usize,
    pub val_clips_per_class: usize,
    pub frames_per_clip: usize,
    pub fps: f64,
    /// Source video frame side length in pixels.
    pub frame_size: u32,
    /// Constant bounding-box side length; every clip of a track shares it, so
    /// the per-track resize is the identity and preserves the signal.
    pub crop_size: u32,
    /// Blob base extent `a0` range, as a fraction of `crop_size`.
    pub base_extent: (f64, f64),
    /// Bird wing-beat frequency range in Hz. Low frequencies relative to the
    /// fps keep the bird's extent smooth between adjacent frames, so the
    /// temporal contrast with the i.i.d. drone jitter is sharp.
    pub flap_freq: (f64, f64),
    /// Modulation depth `m` of the extent, shared by both classes.
    pub modulation: f64,
    /// Background noise standard deviation in [0, 1] intensity units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_clips_per_class: 20,
            val_clips_per_class: 5,
            frames_per_clip: 24,
            fps: 30.0,
            frame_size: 64,
            crop_size: 32,
            base_extent: (0.25, 0.40),
            flap_freq: (1.0, 2.0),
            modulation: 0.35,
            noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.train_clips_per_class == 0 || self.val_clips_per_class == 0 {
            return Err("need at least one clip per class per split".into());
        }
        if self.frames_per_clip == 0 || !(self.fps > 0.0) {
            return Err("frames_per_clip and fps must be positive".into());
        }
        if self.crop_size == 0 || self.crop_size > self.frame_size {
            return Err(format!(
                "need 0 < crop_size <= frame_size, got {} / {}",
                self.crop_size, self.frame_size
            ));
        }
        let (lo, hi) = self.base_extent;
        if !(0.0 < lo && lo <= hi && hi < 0.5) {
            return Err(format!("base_extent must satisfy 0 < lo <= hi < 0.5, got {lo} / {hi}"));
        }
        if !(0.0 < self.modulation && self.modulation < 1.0) {
            return Err(format!("modulation must be in (0, 1), got {}", self.modulation));
        }
        if self.flap_freq.0 <= 0.0 || self.flap_freq.1 < self.flap_freq.0 {
            return Err(format!("bad flap_freq range {:?}", self.flap_freq));
        }
        if self.noise < 0.0 {
            return Err("noise must be >= 0".into());
        }
        Ok(())
    }
}

/// How the blob extent evolves over the clip.
#[derive(Debug, Clone)]
enum Temporal {
    /// Smooth sinusoid: phase advances by `2 pi f / fps` per frame.
    Flap { freq: f64, phase0: f64 },
    /// Independently drawn uniform phase per frame.
    Jitter { phases: Vec<f64> },
}

/// All randomness of one clip, drawn up front so rendering is a pure function.
#[derive(Debug, Clone)]
pub struct ClipPlan {
    pub video_id: String,
    pub split: Split,
    pub label: Label,
    cfg: SynthConfig,
    base_extent_px: f64,
    aspect: f64,
    brightness: f64,
    start: (f64, f64),
    velocity: (f64, f64),
    temporal: Temporal,
    render_seed: u64,
}

impl ClipPlan {
    fn draw(cfg: &SynthConfig, split: Split, label: Label, index: usize) -> ClipPlan {
        let salt = (split as u64) << 1 | label.index() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, salt, index as u64));
        let (lo, hi) = cfg.base_extent;
        let base_extent_px = rng.gen_range(lo..=hi) * cfg.crop_size as f64;
        let margin = cfg.crop_size as f64 / 2.0;
        let lo_c = margin;
        let hi_c = cfg.frame_size as f64 - margin;
        let start = (rng.gen_range(lo_c..hi_c), rng.gen_range(lo_c..hi_c));
        // Slow drift; identical distribution for both classes.
        let velocity = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let brightness = rng.gen_range(0.5..0.9);
        let aspect = rng.gen_range(0.8..1.2);
        let temporal = match label {
            Label::Bird => Temporal::Flap {
                freq: rng.gen_range(cfg.flap_freq.0..=cfg.flap_freq.1),
                phase0: rng.gen_range(0.0..std::f64::consts::TAU),
            },
            Label::Drone => Temporal::Jitter {
                phases: (0..cfg.frames_per_clip)
                    .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                    .collect(),
            },
        };
        ClipPlan {
            video_id: format!("synth_{}_{}_{index:04}", split.as_str(), label.as_str()),
            split,
            label,
            cfg: *cfg,
            base_extent_px,
            aspect,
            brightness,
            start,
            velocity,
            temporal,
            render_seed: rng.gen(),
        }
    }

    /// Horizontal blob extent (pixels) at each frame.
    pub fn extents(&self) -> Vec<f64> {
        (0..self.cfg.frames_per_clip)
            .map(|t| {
                let phase = match &self.temporal {
                    Temporal::Flap { freq, phase0 } => {
                        phase0 + std::f64::consts::TAU * freq * t as f64 / self.cfg.fps
                    }
                    Temporal::Jitter { phases } => phases[t],
                };
                self.base_extent_px * (1.0 + self.cfg.modulation * phase.sin())
            })
            .collect()
    }

    fn center(&self, t: usize) -> (f64, f64) {
        let margin = self.cfg.crop_size as f64 / 2.0;
        let clamp = |v: f64| v.clamp(margin, self.cfg.frame_size as f64 - margin);
        (
            clamp(self.start.0 + self.velocity.0 * t as f64),
            clamp(self.start.1 + self.velocity.1 * t as f64),
        )
    }

    /// Renders the full source video for this clip.
    pub fn render(&self) -> Vec<RgbImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.render_seed);
        let size = self.cfg.frame_size;
        let extents = self.extents();
        (0..self.cfg.frames_per_clip)
            .map(|t| {
                let (cx, cy) = self.center(t);
                let ax = extents[t].max(0.5);
                let ay = (self.base_extent_px * self.aspect).max(0.5);
                let mut img = RgbImage::new(size, size);
                for y in 0..size {
                    for x in 0..size {
                        let noise: f64 = self.cfg.noise * gauss(&mut rng);
                        let dx = (x as f64 + 0.5 - cx) / ax;
                        let dy = (y as f64 + 0.5 - cy) / ay;
                        let blob = self.brightness * (-(dx * dx + dy * dy)).exp();
                        let v = ((0.1 + noise + blob).clamp(0.0, 1.0) * 255.0).round() as u8;
                        img.put_pixel(x, y, Rgb([v, v, v]));
                    }
                }
                img
            })
            .collect()
    }

    /// The tracker-style output for this clip: one detected box per frame,
    /// constant size, following the blob center.
    pub fn track(&self) -> Track {
        let crop = self.cfg.crop_size;
        let max_xy = (self.cfg.frame_size - crop) as i64;
        let boxes = (0..self.cfg.frames_per_clip)
            .map(|t| {
                let (cx, cy) = self.center(t);
                let x = ((cx - crop as f64 / 2.0).round() as i64).clamp(0, max_xy);
                let y = ((cy - crop as f64 / 2.0).round() as i64).clamp(0, max_xy);
                BoundingBox {
                    frame_index: t as u64,
                    x,
                    y,
                    width: crop,
                    height: crop,
                    source: BoxSource::Detected,
                    score: 0.9,
                }
            })
            .collect();
        Track {
            video_id: self.video_id.clone(),
            track_id: "t0".to_string(),
            fps: self.cfg.fps,
            label: self.label,
            boxes,
        }
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// All clip plans of a dataset, in a fixed order.
pub fn plans(cfg: &SynthConfig) -> Vec<ClipPlan> {
    let mut out = Vec::new();
    for (split, count) in [
        (Split::Train, cfg.train_clips_per_class),
        (Split::Val, cfg.val_clips_per_class),
    ] {
        for label in [Label::Drone, Label::Bird] {
            for i in 0..count {
                out.push(ClipPlan::draw(cfg, split, label, i));
            }
        }
    }
    out
}

/// Generates the dataset through the regular ingestion pipeline: synthesizes
/// tracks and video frames, then builds the clip tree + manifest under
/// `out_root`. Also writes the synthetic tracks to `out_root/tracks.jsonl`.
pub fn generate(cfg: &SynthConfig, out_root: &Path) -> Result<DatasetManifest> {
    cfg.validate()
        .map_err(|msg| crate::error::Error::Invalid { what: "synth config", msg })?;
    let plans = plans(cfg);
    let tracks: Vec<Track> = plans.iter().map(|p| p.track()).collect();
    let split_map: BTreeMap<String, Split> =
        plans.iter().map(|p| (p.video_id.clone(), p.split)).collect();
    let by_id: HashMap<&str, &ClipPlan> =
        plans.iter().map(|p| (p.video_id.as_str(), p)).collect();
    std::fs::create_dir_all(out_root).map_err(|e| crate::error::Error::io(out_root, e))?;
    crate::trackio::write_tracks(out_root.join("tracks.jsonl"), &tracks)?;
    let store_for_video = |video_id: &str| -> Result<Box<dyn VideoFrameStore>> {
        let plan = by_id.get(video_id).ok_or_else(|| {
            crate::error::Error::UnmappedVideo(video_id.to_string())
        })?;
        Ok(Box::new(MemoryFrameStore::new(video_id, plan.render())))
    };
    build_dataset(&tracks, &store_for_video, &split_map, out_root, DEFAULT_GAP_THRESHOLD)
}

/// A track with planted predicted-only runs plus its expected segmentation,
/// derived from the run plan rather than from a box-level scan.
#[derive(Debug, Clone)]
pub struct GapTrackFixture {
    pub track: Track,
    /// Expected `split_track` output: kept box positions per segment.
    pub expected: Vec<Vec<usize>>,
}

/// Builds a track from alternating (source, run length) spans and computes
/// its expected segmentation directly from the plan.
pub fn make_planted_track(runs: &[(BoxSource, usize)], gap_threshold: usize) -> GapTrackFixture {
    let mut boxes = Vec::new();
    let mut expected = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut pos = 0usize;
    for &(source, len) in runs {
        let dropped = source == BoxSource::Predicted && len >= gap_threshold;
        for _ in 0..len {
            if dropped {
                if !current.is_empty() {
                    expected.push(std::mem::take(&mut current));
                }
            } else {
                current.push(pos);
            }
            boxes.push(BoundingBox {
                frame_index: pos as u64,
                x: 1,
                y: 2,
                width: 12,
                height: 12,
                source,
                score: if source == BoxSource::Detected { 0.8 } else { 0.0 },
            });
            pos += 1;
        }
    }
    if !current.is_empty() {
        expected.push(current);
    }
    let track = Track {
        video_id: "gap_fixture".to_string(),
        track_id: "t0".to_string(),
        fps: 30.0,
        label: Label::Drone,
        boxes,
    };
    GapTrackFixture { track, expected }
}

/// Randomized fixtures: alternating detected / predicted runs with lengths
/// straddling the gap threshold.
pub fn make_gap_tracks(count: usize, gap_threshold: usize, seed: u64) -> Vec<GapTrackFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let spans = rng.gen_range(1..8usize);
            let mut runs = Vec::new();
            for i in 0..spans {
                let source = if i % 2 == 0 { BoxSource::Detected } else { BoxSource::Predicted };
                // Lengths concentrated around the threshold to exercise both
                // sides of the rule.
                let len = rng.gen_range(1..=gap_threshold + 6);
                runs.push((source, len));
            }
            let mut fixture = make_planted_track(&runs, gap_threshold);
            fixture.track.video_id = format!("gap_{:08x}", rng.gen::<u32>());
            fixture
        })
        .collect()
}
