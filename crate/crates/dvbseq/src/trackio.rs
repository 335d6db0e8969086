//! Tracker-output ingestion: the on-disk track format, validation, and
//! frame-crop extraction.
//!
//! A track file is line-delimited: one JSON record per track. Frames are
//! supplied behind the [`VideoFrameStore`] trait, either as a directory of
//! zero-padded numbered PNGs ([`ImageDirStore`]) or in memory
//! ([`MemoryFrameStore`]).

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class label. The dataset keeps only these two; any other annotation is
/// rejected at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Drone,
    Bird,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Drone, Label::Bird];

    /// Index used in confusion matrices and class-score vectors.
    pub fn index(self) -> usize {
        match self {
            Label::Drone => 0,
            Label::Bird => 1,
        }
    }

    pub fn from_index(idx: usize) -> Option<Label> {
        match idx {
            0 => Some(Label::Drone),
            1 => Some(Label::Bird),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Drone => "drone",
            Label::Bird => "bird",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Label> {
        match s {
            "drone" => Ok(Label::Drone),
            "bird" => Ok(Label::Bird),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a box was confirmed by the detector or coasted by the Kalman
/// tracker's motion model alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxSource {
    Detected,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    #[serde(rename = "frame")]
    pub frame_index: u64,
    /// Top-left corner, in pixels. May fall outside the frame.
    pub x: i64,
    pub y: i64,
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
    pub source: BoxSource,
    /// Detector confidence; 0 is allowed for predicted boxes.
    pub score: f32,
}

impl BoundingBox {
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err(format!(
                "nonpositive box dims {}x{} at frame {}",
                self.width, self.height, self.frame_index
            ));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!(
                "score {} out of [0,1] at frame {}",
                self.score, self.frame_index
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Track {
    pub video_id: String,
    pub track_id: String,
    pub fps: f64,
    pub label: Label,
    pub boxes: Vec<BoundingBox>,
}

impl Track {
    /// Checks all track invariants: non-empty, positive fps, valid boxes,
    /// frame indices strictly increasing.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.boxes.is_empty() {
            return Err("track has no boxes".to_string());
        }
        if !(self.fps > 0.0) {
            return Err(format!("fps must be > 0, got {}", self.fps));
        }
        for b in &self.boxes {
            b.validate()?;
        }
        for pair in self.boxes.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(format!(
                    "frames not strictly increasing: {} then {}",
                    pair[0].frame_index, pair[1].frame_index
                ));
            }
        }
        Ok(())
    }
}

/// Random access to the video frames a track refers to.
///
/// Implementations must be safe for concurrent reads or document a
/// single-reader restriction.
pub trait VideoFrameStore {
    fn video_id(&self) -> &str;
    fn frame_count(&self) -> u64;
    fn frame(&self, index: u64) -> Result<RgbImage>;
}

/// Frames stored as `<dir>/<index:06>.png`.
pub struct ImageDirStore {
    video_id: String,
    dir: PathBuf,
    frame_count: u64,
}

impl ImageDirStore {
    pub fn open(video_id: impl Into<String>, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let mut count = 0u64;
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().extension().is_some_and(|e| e == "png") {
                count += 1;
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            dir,
            frame_count: count,
        })
    }

    pub fn frame_path(dir: &Path, index: u64) -> PathBuf {
        dir.join(format!("{index:06}.png"))
    }
}

impl VideoFrameStore for ImageDirStore {
    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn frame_count(&self) -> u64 {
        self.frame_count
    }

    fn frame(&self, index: u64) -> Result<RgbImage> {
        let path = Self::frame_path(&self.dir, index);
        if !path.exists() {
            return Err(Error::FrameMissing {
                video_id: self.video_id.clone(),
                frame: index,
            });
        }
        Ok(image::open(&path)?.to_rgb8())
    }
}

/// In-memory store, used by the synthetic generator and in tests.
pub struct MemoryFrameStore {
    video_id: String,
    frames: Vec<RgbImage>,
}

impl MemoryFrameStore {
    pub fn new(video_id: impl Into<String>, frames: Vec<RgbImage>) -> Self {
        Self {
            video_id: video_id.into(),
            frames,
        }
    }
}

impl VideoFrameStore for MemoryFrameStore {
    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn frame_count(&self) -> u64 {
        self.frames.len() as u64
    }

    fn frame(&self, index: u64) -> Result<RgbImage> {
        self.frames
            .get(index as usize)
            .cloned()
            .ok_or_else(|| Error::FrameMissing {
                video_id: self.video_id.clone(),
                frame: index,
            })
    }
}

/// Reads a line-delimited track file, validating every record.
pub fn load_tracks(path: impl AsRef<Path>) -> Result<Vec<Track>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut tracks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let track: Track = serde_json::from_str(&line).map_err(|e| Error::TrackFormat {
            line: line_no,
            msg: e.to_string(),
        })?;
        track.validate().map_err(|msg| Error::TrackFormat {
            line: line_no,
            msg,
        })?;
        tracks.push(track);
    }
    Ok(tracks)
}

/// Writes tracks in the same line-delimited format `load_tracks` reads.
pub fn write_tracks(path: impl AsRef<Path>, tracks: &[Track]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for track in tracks {
        serde_json::to_writer(&mut file, track)?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Groups tracks by their source video id.
pub fn tracks_by_video(tracks: &[Track]) -> HashMap<&str, Vec<&Track>> {
    let mut map: HashMap<&str, Vec<&Track>> = HashMap::new();
    for t in tracks {
        map.entry(t.video_id.as_str()).or_default().push(t);
    }
    map
}

/// Extracts the box region from its frame. The output always has the box's
/// exact width and height; parts of the box outside the frame are zero-padded.
pub fn crop_box(store: &dyn VideoFrameStore, bbox: &BoundingBox) -> Result<RgbImage> {
    let frame = store.frame(bbox.frame_index)?;
    crop_image(&frame, bbox)
}

/// Same as [`crop_box`] but on an already-loaded frame.
pub fn crop_image(frame: &RgbImage, bbox: &BoundingBox) -> Result<RgbImage> {
    let (fw, fh) = (frame.width() as i64, frame.height() as i64);
    let (bw, bh) = (bbox.width as i64, bbox.height as i64);
    let x0 = bbox.x.max(0);
    let y0 = bbox.y.max(0);
    let x1 = (bbox.x + bw).min(fw);
    let y1 = (bbox.y + bh).min(fh);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::BoxOutsideFrame {
            frame_w: frame.width(),
            frame_h: frame.height(),
            x: bbox.x,
            y: bbox.y,
            w: bbox.width,
            h: bbox.height,
        });
    }
    let mut out = RgbImage::new(bbox.width, bbox.height);
    for y in y0..y1 {
        for x in x0..x1 {
            let px = *frame.get_pixel(x as u32, y as u32);
            out.put_pixel((x - bbox.x) as u32, (y - bbox.y) as u32, px);
        }
    }
    Ok(out)
}
