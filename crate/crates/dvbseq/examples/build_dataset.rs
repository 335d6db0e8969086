//! Builds a clip dataset from tracker output: parses tracks, splits them at
//! long predicted-only gaps, and exports uniformly sized crops plus a
//! manifest. Uses in-memory frames so the example is self-contained; the
//! `dvbseq build-dataset` subcommand does the same from a frames directory.
//!
//! Run with: cargo run --release --example build_dataset

use std::collections::BTreeMap;

use dvbseq::cli::manifest_summary;
use dvbseq::seqdataset::{build_dataset, split_track, Split};
use dvbseq::synthgen::make_planted_track;
use dvbseq::trackio::{BoxSource, MemoryFrameStore, VideoFrameStore};
use image::RgbImage;

const GAP_THRESHOLD: usize = 10;

fn main() -> dvbseq::Result<()> {
    // A track with a 12-frame predicted-only gap in the middle: it must come
    // out as two sequences.
    let fixture = make_planted_track(
        &[
            (BoxSource::Detected, 40),
            (BoxSource::Predicted, 12),
            (BoxSource::Detected, 30),
        ],
        GAP_THRESHOLD,
    );
    let segments = split_track(&fixture.track, GAP_THRESHOLD);
    println!(
        "track of {} boxes splits into {} sequences of lengths {:?}",
        fixture.track.boxes.len(),
        segments.len(),
        segments.iter().map(Vec::len).collect::<Vec<_>>()
    );

    let frame_count = fixture.track.boxes.len();
    let store_for_video = move |video_id: &str| -> dvbseq::Result<Box<dyn VideoFrameStore>> {
        let frames = (0..frame_count)
            .map(|t| RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x + y + t as u32) as u8; 3])))
            .collect();
        Ok(Box::new(MemoryFrameStore::new(video_id, frames)))
    };
    let split_map: BTreeMap<String, Split> =
        [(fixture.track.video_id.clone(), Split::Train)].into();
    let out = std::path::PathBuf::from("target/build-dataset-example");
    let manifest =
        build_dataset(&[fixture.track], &store_for_video, &split_map, &out, GAP_THRESHOLD)?;
    print!("{}", manifest_summary(&manifest));
    println!("dataset written to {}", out.display());
    Ok(())
}
