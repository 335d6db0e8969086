//! Conversion of tracks into exported sequence clips plus a dataset manifest.
//!
//! Construction rules: a track is split into a new sequence after a run of
//! `gap_threshold` (default 10) consecutive predicted-only boxes; the run
//! itself is dropped. Every crop of a track is resized (direct bilinear
//! stretch) to the size of the largest bounding box in that track.
//!
//! Clip storage layout: `<root>/<split>/<label>/<clip_id>/{meta.json, frame_000001.png, ...}`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trackio::{crop_box, BoxSource, Label, Track, VideoFrameStore};

pub const DEFAULT_GAP_THRESHOLD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Invalid {
                what: "split",
                msg: format!("{other:?} (expected \"train\" or \"val\")"),
            }),
        }
    }
}

/// Metadata for one exported clip. Pixel data lives next to it on disk (or in
/// an [`ExportedClip`] before writing).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceClip {
    pub clip_id: String,
    pub video_id: String,
    pub track_id: String,
    pub label: Label,
    pub fps: f64,
    /// (width, height) every stored crop is resized to.
    pub target_size: (u32, u32),
    pub frame_indices: Vec<u64>,
    /// Box source per frame, aligned with `frame_indices`.
    pub sources: Vec<BoxSource>,
    /// Gap threshold the clip was exported with.
    pub gap_threshold: usize,
}

impl SequenceClip {
    pub fn frame_count(&self) -> usize {
        self.frame_indices.len()
    }

    /// Checks clip invariants: strictly increasing frames, aligned sources,
    /// no predicted-only run of `gap_threshold` or more.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.frame_indices.is_empty() {
            return Err("clip has no frames".into());
        }
        if self.frame_indices.len() != self.sources.len() {
            return Err("sources not aligned with frame_indices".into());
        }
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err("zero target size".into());
        }
        for pair in self.frame_indices.windows(2) {
            if pair[1] <= pair[0] {
                return Err("frame indices not strictly increasing".into());
            }
        }
        let mut run = 0usize;
        for s in &self.sources {
            match s {
                BoxSource::Predicted => {
                    run += 1;
                    if run >= self.gap_threshold {
                        return Err(format!(
                            "contains a predicted-only run of length {run} (threshold {})",
                            self.gap_threshold
                        ));
                    }
                }
                BoxSource::Detected => run = 0,
            }
        }
        Ok(())
    }
}

/// A clip together with its resized crops, before anything is written out.
pub struct ExportedClip {
    pub meta: SequenceClip,
    pub frames: Vec<RgbImage>,
}

/// Splits a track into segments at long predicted-only runs.
///
/// Returns positions into `track.boxes`. A maximal run of `gap_threshold` or
/// more consecutive predicted boxes is dropped entirely and closes the current
/// segment; shorter predicted runs are kept in place.
pub fn split_track(track: &Track, gap_threshold: usize) -> Vec<Vec<usize>> {
    assert!(gap_threshold >= 1, "gap_threshold must be >= 1");
    let mut segments: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut i = 0;
    let n = track.boxes.len();
    while i < n {
        if track.boxes[i].source == BoxSource::Predicted {
            let start = i;
            while i < n && track.boxes[i].source == BoxSource::Predicted {
                i += 1;
            }
            let run_len = i - start;
            if run_len >= gap_threshold {
                if !current.is_empty() {
                    segments.push(std::mem::take(&mut current));
                }
            } else {
                current.extend(start..i);
            }
        } else {
            current.push(i);
            i += 1;
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

/// The (width, height) of the largest-area box in the track. Ties resolve to
/// the wider box, then to the earliest frame.
pub fn largest_box_size(track: &Track) -> (u32, u32) {
    let best = track
        .boxes
        .iter()
        .max_by(|a, b| {
            a.area()
                .cmp(&b.area())
                .then(a.width.cmp(&b.width))
                // Earliest frame wins, and boxes are sorted by frame.
                .then(b.frame_index.cmp(&a.frame_index))
        })
        .expect("track is non-empty");
    (best.width, best.height)
}

/// Crops and resizes every segment of a track into clips. The target size is
/// computed over the whole track, so all clips of a track share it.
pub fn export_clips(
    track: &Track,
    store: &dyn VideoFrameStore,
    gap_threshold: usize,
) -> Result<Vec<ExportedClip>> {
    let target = largest_box_size(track);
    let segments = split_track(track, gap_threshold);
    let mut clips = Vec::with_capacity(segments.len());
    for (seg_idx, seg) in segments.iter().enumerate() {
        let mut frames = Vec::with_capacity(seg.len());
        let mut frame_indices = Vec::with_capacity(seg.len());
        let mut sources = Vec::with_capacity(seg.len());
        for &pos in seg {
            let bbox = &track.boxes[pos];
            let crop = crop_box(store, bbox)?;
            let resized = if (crop.width(), crop.height()) == target {
                crop
            } else {
                image::imageops::resize(&crop, target.0, target.1, image::imageops::FilterType::Triangle)
            };
            frames.push(resized);
            frame_indices.push(bbox.frame_index);
            sources.push(bbox.source);
        }
        let meta = SequenceClip {
            clip_id: format!("{}_{}_{:03}", track.video_id, track.track_id, seg_idx),
            video_id: track.video_id.clone(),
            track_id: track.track_id.clone(),
            label: track.label,
            fps: track.fps,
            target_size: target,
            frame_indices,
            sources,
            gap_threshold,
        };
        clips.push(ExportedClip { meta, frames });
    }
    Ok(clips)
}

/// Writes one clip as `<dir>/<clip_id>/{meta.json, frame_000001.png, ...}`.
pub fn write_clip(clip: &ExportedClip, dir: &Path) -> Result<()> {
    let clip_dir = dir.join(&clip.meta.clip_id);
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let meta_path = clip_dir.join("meta.json");
    let file = std::fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    serde_json::to_writer_pretty(file, &clip.meta)?;
    for (i, frame) in clip.frames.iter().enumerate() {
        let path = clip_dir.join(format!("frame_{:06}.png", i + 1));
        frame.save(&path)?;
    }
    Ok(())
}

/// Loads the frames of a stored clip, in order.
pub fn load_clip_frames(clip_dir: &Path, frame_count: usize) -> Result<Vec<RgbImage>> {
    let mut frames = Vec::with_capacity(frame_count);
    for i in 0..frame_count {
        let path = clip_dir.join(format!("frame_{:06}.png", i + 1));
        if !path.exists() {
            return Err(Error::msg(format!("missing clip frame {}", path.display())));
        }
        frames.push(image::open(&path)?.to_rgb8());
    }
    Ok(frames)
}

pub fn load_clip_meta(clip_dir: &Path) -> Result<SequenceClip> {
    let path = clip_dir.join("meta.json");
    let data = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&data)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub video_id: String,
    pub track_id: String,
    pub label: Label,
    pub split: Split,
    pub frame_count: u64,
    pub target_size: (u32, u32),
    /// Path of the clip directory relative to the dataset root.
    pub rel_path: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub tracks: u64,
    pub sequences: u64,
    pub frames: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub drone: ClassStats,
    pub bird: ClassStats,
}

impl SplitStats {
    pub fn class(&self, label: Label) -> &ClassStats {
        match label {
            Label::Drone => &self.drone,
            Label::Bird => &self.bird,
        }
    }

    fn class_mut(&mut self, label: Label) -> &mut ClassStats {
        match label {
            Label::Drone => &mut self.drone,
            Label::Bird => &mut self.bird,
        }
    }

    pub fn total_frames(&self) -> u64 {
        self.drone.frames + self.bird.frames
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: SplitStats,
    pub val: SplitStats,
}

impl DatasetStats {
    pub fn split(&self, split: Split) -> &SplitStats {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut SplitStats {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
        }
    }
}

/// Index of an exported dataset: every clip, its split, and summary stats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub clips: Vec<ClipEntry>,
    /// Split assignment is per source video to prevent leakage.
    pub split_map: BTreeMap<String, Split>,
    pub stats: DatasetStats,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&data)?)
    }

    pub fn clips_in(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

fn compute_stats(clips: &[ClipEntry]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    let mut seen_tracks: BTreeSet<(Split, Label, &str, &str)> = BTreeSet::new();
    for c in clips {
        let class = stats.split_mut(c.split).class_mut(c.label);
        class.sequences += 1;
        class.frames += c.frame_count;
        if seen_tracks.insert((c.split, c.label, c.video_id.as_str(), c.track_id.as_str())) {
            class.tracks += 1;
        }
    }
    stats
}

/// Assembles the manifest for a set of exported clips. The split of every clip
/// is inherited from its source video via `split_map`.
pub fn build_manifest(
    clips: &[SequenceClip],
    split_map: &BTreeMap<String, Split>,
) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(clips.len());
    for clip in clips {
        let split = *split_map
            .get(&clip.video_id)
            .ok_or_else(|| Error::UnmappedVideo(clip.video_id.clone()))?;
        entries.push(ClipEntry {
            clip_id: clip.clip_id.clone(),
            video_id: clip.video_id.clone(),
            track_id: clip.track_id.clone(),
            label: clip.label,
            split,
            frame_count: clip.frame_count() as u64,
            target_size: clip.target_size,
            rel_path: format!("{}/{}/{}", split, clip.label, clip.clip_id),
        });
    }
    let stats = compute_stats(&entries);
    Ok(DatasetManifest {
        clips: entries,
        split_map: split_map.clone(),
        stats,
    })
}

/// Returns human-readable descriptions of every violated manifest invariant.
/// An empty report means the manifest is consistent.
pub fn verify_manifest(manifest: &DatasetManifest) -> Vec<String> {
    let mut violations = Vec::new();
    let mut seen: HashMap<&str, Split> = HashMap::new();
    for c in &manifest.clips {
        if let Some(prev) = seen.insert(&c.clip_id, c.split) {
            if prev != c.split {
                violations.push(format!("duplicate split assignment for clip {}", c.clip_id));
            } else {
                violations.push(format!("duplicate clip entry {}", c.clip_id));
            }
        }
        match manifest.split_map.get(&c.video_id) {
            None => violations.push(format!(
                "clip {} references video {} missing from the split map",
                c.clip_id, c.video_id
            )),
            Some(&s) if s != c.split => violations.push(format!(
                "clip {} assigned to {} but its video {} maps to {}",
                c.clip_id, c.split, c.video_id, s
            )),
            _ => {}
        }
        if c.frame_count == 0 {
            violations.push(format!("clip {} has zero frames", c.clip_id));
        }
        if c.target_size.0 == 0 || c.target_size.1 == 0 {
            violations.push(format!("clip {} has zero target size", c.clip_id));
        }
    }
    if compute_stats(&manifest.clips) != manifest.stats {
        violations.push("stale stats: recomputed counts differ from stored stats".to_string());
    }
    violations
}

/// End-to-end dataset build: splits, crops, resizes and writes every track's
/// clips under `out_root` and returns the manifest (also written to
/// `out_root/manifest.json`).
pub fn build_dataset(
    tracks: &[Track],
    store_for_video: &dyn Fn(&str) -> Result<Box<dyn VideoFrameStore>>,
    split_map: &BTreeMap<String, Split>,
    out_root: &Path,
    gap_threshold: usize,
) -> Result<DatasetManifest> {
    let mut all_meta = Vec::new();
    for track in tracks {
        let split = *split_map
            .get(&track.video_id)
            .ok_or_else(|| Error::UnmappedVideo(track.video_id.clone()))?;
        let store = store_for_video(&track.video_id)?;
        let clips = export_clips(track, store.as_ref(), gap_threshold)?;
        let dir = out_root.join(split.as_str()).join(track.label.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for clip in &clips {
            write_clip(clip, &dir)?;
            all_meta.push(clip.meta.clone());
        }
    }
    let manifest = build_manifest(&all_meta, split_map)?;
    let violations = verify_manifest(&manifest);
    if !violations.is_empty() {
        return Err(Error::msg(format!(
            "built manifest fails verification: {}",
            violations.join("; ")
        )));
    }
    manifest.save(&out_root.join("manifest.json"))?;
    Ok(manifest)
}
