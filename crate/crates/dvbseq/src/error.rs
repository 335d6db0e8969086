//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed track record at line {line}: {msg}")]
    TrackFormat { line: usize, msg: String },

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("unknown label {0:?} (expected \"drone\" or \"bird\")")]
    UnknownLabel(String),

    #[error("unknown model family {0:?} (expected one of {1})")]
    UnknownFamily(String, &'static str),

    #[error("frame {frame} not found in video {video_id:?}")]
    FrameMissing { video_id: String, frame: u64 },

    #[error("box does not intersect the frame (frame {frame_w}x{frame_h}, box x={x} y={y} w={w} h={h})")]
    BoxOutsideFrame {
        frame_w: u32,
        frame_h: u32,
        x: i64,
        y: i64,
        w: u32,
        h: u32,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("video {0:?} has no split assignment")]
    UnmappedVideo(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("{0}")]
    Msg(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn msg(msg: impl Into<String>) -> Self {
        Error::Msg(msg.into())
    }
}
