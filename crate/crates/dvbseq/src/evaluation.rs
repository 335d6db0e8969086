//! Per-class F1 metrics, confusion matrices, and report rendering.
//!
//! Rows of the confusion matrix are true labels, columns are predictions,
//! both in [drone, bird] order.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::clipsampling::{
    center_clip_window, epoch_plan, eval_transform_video, load_batch, collate, ClipDataset,
    ClipSample, CollateMode, TransformConfig,
};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::seqdataset::Split;
use crate::trackio::Label;

/// Unit of evaluation: one prediction per clip or one per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Clip,
    Frame,
}

/// 2x2 counts; `counts[t][p]` is the number of samples with true label index
/// `t` predicted as `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: Label, pred: Label) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class sample counts (row sums), [drone, bird].
    pub fn support(&self) -> [u64; 2] {
        [self.counts[0][0] + self.counts[0][1], self.counts[1][0] + self.counts[1][1]]
    }

    /// Swaps the class roles: transpose in label space (reindex both axes).
    pub fn relabeled(&self) -> Self {
        Self {
            counts: [
                [self.counts[1][1], self.counts[1][0]],
                [self.counts[0][1], self.counts[0][0]],
            ],
        }
    }
}

/// Counts (true, predicted) pairs. Errors when the slices differ in length.
pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(labels) {
        cm.add(t, p);
    }
    Ok(cm)
}

/// (f1_drone, f1_bird, f1_macro). Zero-division in precision or recall
/// resolves to F1 = 0; macro is the unweighted mean.
pub fn f1_scores(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    let f1 = |class: usize| -> f64 {
        let tp = cm.counts[class][class] as f64;
        let fp = cm.counts[1 - class][class] as f64;
        let fn_ = cm.counts[class][1 - class] as f64;
        if tp == 0.0 {
            return 0.0;
        }
        let p = tp / (tp + fp);
        let r = tp / (tp + fn_);
        2.0 * p * r / (p + r)
    };
    let (d, b) = (f1(0), f1(1));
    (d, b, (d + b) / 2.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_drone: f64,
    pub f1_bird: f64,
    pub f1_macro: f64,
    pub confusion: ConfusionMatrix,
    pub n_samples: u64,
    pub granularity: Granularity,
}

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix, granularity: Granularity) -> Self {
        let (f1_drone, f1_bird, f1_macro) = f1_scores(&cm);
        Self {
            f1_drone,
            f1_bird,
            f1_macro,
            confusion: cm,
            n_samples: cm.total(),
            granularity,
        }
    }

    pub fn from_predictions(
        preds: &[Label],
        labels: &[Label],
        granularity: Granularity,
    ) -> Result<Self> {
        Ok(Self::from_confusion(confusion(preds, labels)?, granularity))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Temporal windows voted (logit-averaged) per clip; 1 = single
    /// deterministic center window.
    pub windows: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { batch_size: 16, windows: 1 }
    }
}

/// Evenly offset deterministic windows for multi-window voting. `which` = 0
/// with `of` = 1 reduces to the center window.
fn offset_clip_window(
    clip_length: usize,
    fps: f64,
    num_frames: usize,
    which: usize,
    of: usize,
) -> Vec<usize> {
    if of <= 1 {
        return center_clip_window(clip_length, fps, num_frames);
    }
    let base = center_clip_window(clip_length, fps, num_frames);
    let span = base.last().unwrap() - base[0];
    if span + 1 >= clip_length {
        return base;
    }
    let max_start = clip_length - span - 1;
    let start = (which * max_start) / (of - 1);
    let shift = start as i64 - base[0] as i64;
    base.iter().map(|&i| (i as i64 + shift) as usize).collect()
}

/// Runs the model over a split and produces the metric report. Sequence
/// families predict once per clip from deterministic windows; the image
/// family predicts once per stored frame.
pub fn evaluate(
    model: &Model,
    ds: &ClipDataset,
    split: Split,
    cfg: &TransformConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    evaluate_as(model, ds, split, cfg, opts, None)
}

/// Like [`evaluate`] but with an explicit granularity request. The image
/// family additionally supports clip granularity (mean logits over a clip's
/// frames); sequence families only support clip granularity.
pub fn evaluate_as(
    model: &Model,
    ds: &ClipDataset,
    split: Split,
    cfg: &TransformConfig,
    opts: &EvalOptions,
    want: Option<Granularity>,
) -> Result<EvalReport> {
    if ds.manifest.clips_in(split).next().is_none() {
        return Err(Error::Invalid {
            what: "evaluation split",
            msg: format!("split {split:?} has no clips"),
        });
    }
    let mut cm = ConfusionMatrix::default();
    if model.spec.family.is_sequence() {
        if want == Some(Granularity::Frame) {
            return Err(Error::Invalid {
                what: "evaluation granularity",
                msg: "sequence families predict per clip, not per frame".into(),
            });
        }
        let entries: Vec<_> = ds.manifest.clips_in(split).collect();
        for chunk in entries.chunks(opts.batch_size.max(1)) {
            // (clip, summed logits) accumulated over voting windows.
            let mut logits = vec![[0f64; 2]; chunk.len()];
            for w in 0..opts.windows.max(1) {
                let mut samples = Vec::with_capacity(chunk.len());
                for entry in chunk {
                    let frames = ds.load_frames(entry)?;
                    let fps = ds.clip_fps(entry)?;
                    let idx = offset_clip_window(
                        frames.len(),
                        fps,
                        model.spec.num_frames,
                        w,
                        opts.windows,
                    );
                    let picked: Vec<RgbImage> = idx.iter().map(|&i| frames[i].clone()).collect();
                    samples.push(ClipSample {
                        clip_id: entry.clip_id.clone(),
                        label: entry.label,
                        frames: eval_transform_video(&picked, cfg),
                    });
                }
                let batch = collate(&samples, CollateMode::Sequence, &model.device)?;
                let scores = model.forward(&batch.pixels, false)?;
                let rows: Vec<Vec<f32>> = scores.to_dtype(candle_core::DType::F32)?.to_vec2()?;
                for (acc, row) in logits.iter_mut().zip(rows) {
                    acc[0] += row[0] as f64;
                    acc[1] += row[1] as f64;
                }
            }
            for (entry, acc) in chunk.iter().zip(logits) {
                let pred = if acc[1] > acc[0] { Label::Bird } else { Label::Drone };
                cm.add(entry.label, pred);
            }
        }
        Ok(EvalReport::from_confusion(cm, Granularity::Clip))
    } else if want == Some(Granularity::Clip) {
        // Aggregate the image model per clip: mean logits over its frames.
        for entry in ds.manifest.clips_in(split) {
            let frames = ds.load_frames(entry)?;
            let samples: Vec<ClipSample> = frames
                .iter()
                .enumerate()
                .map(|(i, f)| ClipSample {
                    clip_id: format!("{}#{i}", entry.clip_id),
                    label: entry.label,
                    frames: vec![crate::clipsampling::eval_transform_frame(f, cfg)],
                })
                .collect();
            let batch = collate(&samples, CollateMode::Image, &model.device)?;
            let scores = model.forward(&batch.pixels, false)?;
            let rows: Vec<Vec<f32>> = scores.to_dtype(candle_core::DType::F32)?.to_vec2()?;
            let mut acc = [0f64; 2];
            for row in &rows {
                acc[0] += row[0] as f64;
                acc[1] += row[1] as f64;
            }
            let pred = if acc[1] > acc[0] { Label::Bird } else { Label::Drone };
            cm.add(entry.label, pred);
        }
        Ok(EvalReport::from_confusion(cm, Granularity::Clip))
    } else {
        let plan = epoch_plan(ds, split, CollateMode::Image, opts.batch_size.max(1), 0, 0, false);
        for keys in &plan {
            let batch = load_batch(ds, keys, CollateMode::Image, cfg, 1, false, &model.device)?;
            let scores = model.forward(&batch.pixels, false)?;
            let rows: Vec<Vec<f32>> = scores.to_dtype(candle_core::DType::F32)?.to_vec2()?;
            for (truth, row) in batch.labels.iter().zip(rows) {
                let pred = if row[1] > row[0] { Label::Bird } else { Label::Drone };
                cm.add(*truth, pred);
            }
        }
        Ok(EvalReport::from_confusion(cm, Granularity::Frame))
    }
}

/// Table with one row per evaluated modality, Table 1 column order.
pub fn render_comparison(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>9} {:>9} {:>9}", "model", "f1_drone", "f1_bird", "f1_macro");
    for (name, report) in rows {
        let _ = writeln!(
            out,
            "{:<24} {:>9.4} {:>9.4} {:>9.4}",
            name, report.f1_drone, report.f1_bird, report.f1_macro
        );
    }
    out
}

/// Plain-text rendering of one report.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "granularity: {:?}  samples: {}", report.granularity, report.n_samples);
    let _ = writeln!(
        out,
        "f1_drone: {:.4}  f1_bird: {:.4}  f1_macro: {:.4}",
        report.f1_drone, report.f1_bird, report.f1_macro
    );
    let _ = writeln!(out, "confusion (rows = true, cols = predicted; [drone, bird]):");
    for row in &report.confusion.counts {
        let _ = writeln!(out, "  {:>8} {:>8}", row[0], row[1]);
    }
    out
}

/// Writes `metrics.json`, `report.txt`, and `confusion.png` under `out_dir`.
pub fn render_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics = out_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&metrics, json).map_err(|e| Error::io(&metrics, e))?;
    let txt = out_dir.join("report.txt");
    std::fs::write(&txt, render_text(report)).map_err(|e| Error::io(&txt, e))?;
    let png = out_dir.join("confusion.png");
    confusion_plot(&report.confusion)
        .save(&png)
        .map_err(Error::Image)?;
    Ok(())
}

const CELL: u32 = 96;
const MARGIN: u32 = 24;

/// 2x2 annotated confusion-matrix raster: cell shade proportional to count,
/// counts printed in each cell, axis order [drone, bird].
pub fn confusion_plot(cm: &ConfusionMatrix) -> RgbImage {
    let side = 2 * CELL + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let max = cm.counts.iter().flatten().copied().max().max(Some(1)).unwrap();
    for t in 0..2u32 {
        for p in 0..2u32 {
            let count = cm.counts[t as usize][p as usize];
            let frac = count as f64 / max as f64;
            // White (0) to steel blue (max).
            let shade = |lo: f64, hi: f64| (lo + (hi - lo) * frac) as u8;
            let color = Rgb([shade(255.0, 40.0), shade(255.0, 90.0), shade(255.0, 160.0)]);
            let (x0, y0) = (MARGIN + p * CELL, MARGIN + t * CELL);
            for y in y0..y0 + CELL {
                for x in x0..x0 + CELL {
                    img.put_pixel(x, y, color);
                }
            }
            let text_color = if frac > 0.5 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) };
            draw_number(&mut img, count, x0 + CELL / 2, y0 + CELL / 2, text_color);
        }
    }
    // Grid lines.
    for i in 0..=2u32 {
        for k in 0..side {
            let gm = Rgb([60, 60, 60]);
            if (MARGIN..MARGIN + 2 * CELL).contains(&k) {
                img.put_pixel(MARGIN + i * CELL - (i / 2), k, gm);
                img.put_pixel(k, MARGIN + i * CELL - (i / 2), gm);
            }
        }
    }
    img
}

/// 3x5 digit glyphs, row-major bits.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111], // 0
    [0b010, 0b110, 0b010, 0b010, 0b111], // 1
    [0b111, 0b001, 0b111, 0b100, 0b111], // 2
    [0b111, 0b001, 0b111, 0b001, 0b111], // 3
    [0b101, 0b101, 0b111, 0b001, 0b001], // 4
    [0b111, 0b100, 0b111, 0b001, 0b111], // 5
    [0b111, 0b100, 0b111, 0b101, 0b111], // 6
    [0b111, 0b001, 0b010, 0b010, 0b010], // 7
    [0b111, 0b101, 0b111, 0b101, 0b111], // 8
    [0b111, 0b101, 0b111, 0b001, 0b111], // 9
];

fn draw_number(img: &mut RgbImage, value: u64, cx: u32, cy: u32, color: Rgb<u8>) {
    let text = value.to_string();
    let scale = 3u32;
    let glyph_w = 3 * scale + scale; // glyph + spacing
    let total_w = text.len() as u32 * glyph_w - scale;
    let mut x = cx.saturating_sub(total_w / 2);
    let y0 = cy.saturating_sub(5 * scale / 2);
    for ch in text.chars() {
        let glyph = &DIGITS[ch.to_digit(10).unwrap() as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let (px, py) = (x + col * scale + dx, y0 + row as u32 * scale + dy);
                            if px < img.width() && py < img.height() {
                                img.put_pixel(px, py, color);
                            }
                        }
                    }
                }
            }
        }
        x += glyph_w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm(counts: [[u64; 2]; 2]) -> ConfusionMatrix {
        ConfusionMatrix { counts }
    }

    #[test]
    fn perfect_predictions() {
        let preds = [vec![Label::Drone; 50], vec![Label::Bird; 20]].concat();
        let m = confusion(&preds, &preds).unwrap();
        assert_eq!(m.counts, [[50, 0], [0, 20]]);
        assert_eq!(f1_scores(&m), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_drone_predictor() {
        let labels = [vec![Label::Drone; 10], vec![Label::Bird; 10]].concat();
        let preds = vec![Label::Drone; 20];
        let m = confusion(&preds, &labels).unwrap();
        assert_eq!(m.counts, [[10, 0], [10, 0]]);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(confusion(&[Label::Drone], &[]).is_err());
    }

    #[test]
    fn f1_formula_example() {
        // Bird: TP=8, FP=2, FN=4 -> P=0.8, R=2/3, F1=0.72727...
        let m = cm([[90, 2], [4, 8]]);
        let (_, f1_bird, _) = f1_scores(&m);
        assert!((f1_bird - 0.727272727).abs() < 1e-6, "{f1_bird}");
    }

    #[test]
    fn bird_collapse_example() {
        let m = cm([[50, 0], [20, 0]]);
        let (d, b, macro_) = f1_scores(&m);
        assert!((d - 0.833333333).abs() < 1e-6, "{d}");
        assert_eq!(b, 0.0);
        assert!((macro_ - 0.416666667).abs() < 1e-6, "{macro_}");
    }

    #[test]
    fn zero_everything_is_zero() {
        assert_eq!(f1_scores(&ConfusionMatrix::default()), (0.0, 0.0, 0.0));
    }

    fn brute_force(preds: &[Label], labels: &[Label]) -> (f64, f64, f64) {
        let f1 = |class: Label| {
            let tp = preds
                .iter()
                .zip(labels)
                .filter(|(p, l)| **p == class && **l == class)
                .count() as f64;
            let fp = preds
                .iter()
                .zip(labels)
                .filter(|(p, l)| **p == class && **l != class)
                .count() as f64;
            let fn_ = preds
                .iter()
                .zip(labels)
                .filter(|(p, l)| **p != class && **l == class)
                .count() as f64;
            if tp == 0.0 {
                return 0.0;
            }
            let (p, r) = (tp / (tp + fp), tp / (tp + fn_));
            2.0 * p * r / (p + r)
        };
        let (d, b) = (f1(Label::Drone), f1(Label::Bird));
        (d, b, (d + b) / 2.0)
    }

    #[test]
    fn matches_brute_force_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            let draw = |rng: &mut ChaCha8Rng| {
                (0..n)
                    .map(|_| if rng.gen::<bool>() { Label::Bird } else { Label::Drone })
                    .collect::<Vec<_>>()
            };
            let preds = draw(&mut rng);
            let labels = draw(&mut rng);
            let fast = f1_scores(&confusion(&preds, &labels).unwrap());
            let slow = brute_force(&preds, &labels);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100;
        let draw = |rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| if rng.gen::<bool>() { Label::Bird } else { Label::Drone })
                .collect::<Vec<_>>()
        };
        let preds = draw(&mut rng);
        let labels = draw(&mut rng);
        let base = confusion(&preds, &labels).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let pp: Vec<Label> = order.iter().map(|&i| preds[i]).collect();
        let pl: Vec<Label> = order.iter().map(|&i| labels[i]).collect();
        assert_eq!(base, confusion(&pp, &pl).unwrap());
    }

    #[test]
    fn relabel_swaps_class_f1s_keeps_macro() {
        let m = cm([[30, 5], [9, 14]]);
        let (d, b, macro_) = f1_scores(&m);
        let swapped = m.relabeled();
        let (d2, b2, macro2) = f1_scores(&swapped);
        assert_eq!((d2, b2), (b, d));
        assert_eq!(macro_, macro2);
        // Row sums swap accordingly.
        assert_eq!(swapped.support(), [23, 35]);
    }

    #[test]
    fn report_macro_is_mean() {
        let report = EvalReport::from_confusion(cm([[30, 5], [9, 14]]), Granularity::Clip);
        assert_eq!(report.f1_macro, (report.f1_drone + report.f1_bird) / 2.0);
        assert_eq!(report.n_samples, 58);
    }

    #[test]
    fn report_json_roundtrip() {
        let report = EvalReport::from_confusion(cm([[3, 1], [0, 7]]), Granularity::Frame);
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.f1_macro, report.f1_macro);
        assert_eq!(back.confusion, report.confusion);
        assert_eq!(back.granularity, Granularity::Frame);
    }

    #[test]
    fn render_files_exist_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let report = EvalReport::from_confusion(cm([[41, 2], [7, 30]]), Granularity::Clip);
        render_report(&report, dir.path()).unwrap();
        let json = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.confusion, report.confusion);
        assert!((back.f1_drone - report.f1_drone).abs() < 1e-12);
        let png = std::fs::metadata(dir.path().join("confusion.png")).unwrap();
        assert!(png.len() > 0);
        let img = image::open(dir.path().join("confusion.png")).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (2 * CELL + 2 * MARGIN, 2 * CELL + 2 * MARGIN));
    }

    #[test]
    fn comparison_table_has_header_and_rows() {
        let report = EvalReport::from_confusion(cm([[10, 0], [0, 10]]), Granularity::Clip);
        let table = render_comparison(&[
            ("image_resnet18".into(), report.clone()),
            ("resnet18_lstm".into(), report),
        ]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("f1_drone"));
        assert!(lines[0].contains("f1_bird"));
        assert!(lines[0].contains("f1_macro"));
        assert!(lines[1].starts_with("image_resnet18"));
    }

    #[test]
    fn offset_windows_cover_clip() {
        // Clip of 100 frames at 30 fps: window span 14. First window starts at
        // 0, last ends at the clip end.
        let first = offset_clip_window(100, 30.0, 8, 0, 3);
        let last = offset_clip_window(100, 30.0, 8, 2, 3);
        assert_eq!(first[0], 0);
        assert_eq!(*last.last().unwrap(), 99);
        assert_eq!(offset_clip_window(100, 30.0, 8, 0, 1), center_clip_window(100, 30.0, 8));
    }
}
