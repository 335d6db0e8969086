//! Demonstrates exact resume: a run stopped halfway and resumed from its
//! checkpoint produces bit-identical weights and metrics to an
//! uninterrupted run with the same seed.
//!
//! Run with: cargo run --release --example resume_training

use candle_core::{DType, Device};
use dvbseq::clipsampling::{ClipDataset, NormalizationStats, TransformConfig};
use dvbseq::models::{build_model, FreezePolicy, ModelFamily, ModelSpec};
use dvbseq::synthgen::{generate, SynthConfig};
use dvbseq::training::{train, train_until, TrainConfig};

fn model() -> dvbseq::Result<dvbseq::models::Model> {
    let mut spec = ModelSpec::tiny(ModelFamily::Resnet18Lstm, 8);
    spec.num_frames = 16;
    build_model(&spec, FreezePolicy::all_unfrozen(), &Device::Cpu, DType::F32, 3)
}

fn main() -> dvbseq::Result<()> {
    let base = std::path::PathBuf::from("target/resume-example");
    let data = base.join("data");
    let synth = SynthConfig {
        train_clips_per_class: 20,
        val_clips_per_class: 8,
        seed: 5,
        ..SynthConfig::default()
    };
    generate(&synth, &data)?;
    let ds = ClipDataset::open(&data)?;

    let mut cfg = TrainConfig::for_family(ModelFamily::Resnet18Lstm);
    cfg.epochs = 4;
    cfg.warmup_epochs = 1;
    cfg.decay_epoch = 3;
    cfg.seed = 11;
    let transform = TransformConfig::scaled_to(32, NormalizationStats::video());

    let run_a = base.join("uninterrupted");
    let _ = std::fs::remove_dir_all(&run_a);
    train(&model()?, &ds, &cfg, &transform, &run_a, false)?;

    let run_b = base.join("resumed");
    let _ = std::fs::remove_dir_all(&run_b);
    train_until(&model()?, &ds, &cfg, &transform, &run_b, false, Some(2))?;
    println!("stopped after 2 of {} epochs; resuming from checkpoint", cfg.epochs);
    train(&model()?, &ds, &cfg, &transform, &run_b, true)?;

    let weights_a = std::fs::read(run_a.join("last.safetensors")).unwrap();
    let weights_b = std::fs::read(run_b.join("last.safetensors")).unwrap();
    println!(
        "final weights {}",
        if weights_a == weights_b { "bit-identical" } else { "DIFFER (bug!)" }
    );
    Ok(())
}
