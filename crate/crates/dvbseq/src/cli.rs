//! Command-line entrypoint and configuration management.
//!
//! One config file plus flag overrides (flags win, then the
//! `DVBSEQ_DATASET_ROOT` environment variable, then the file); the fully
//! resolved configuration and the provenance of every value are echoed into
//! each run directory. Run directories are named by timestamp + config hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use candle_core::{DType, Device};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clipsampling::{ClipDataset, NormalizationStats, TransformConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_as, render_comparison, render_report, render_text, EvalOptions, EvalReport, Granularity};
use crate::models::{build_model, FreezePolicy, Model, ModelFamily, ModelSpec, ParamReport};
use crate::seqdataset::{build_dataset, DatasetManifest, Split};
use crate::synthgen::{generate, SynthConfig};
use crate::trackio::{load_tracks, ImageDirStore, Label, VideoFrameStore};
use crate::training::{load_metrics, render_metrics, train, TrainConfig};

pub const DATASET_ROOT_ENV: &str = "DVBSEQ_DATASET_ROOT";

/// File-loadable run configuration; every field optional, unknown keys
/// rejected. Flags override the environment, which overrides the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub out_root: Option<PathBuf>,
    pub family: Option<ModelFamily>,
    pub unfrozen_backbone_blocks: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub gamma: Option<f64>,
    /// Reduced backbone width for desk-scale runs; absent = full size.
    pub tiny_base: Option<usize>,
    pub input_size: Option<u32>,
    pub gap_threshold: Option<usize>,
    pub synth: Option<SynthConfig>,
}

/// Where each resolved value came from.
pub type Provenance = BTreeMap<String, &'static str>;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Field-wise merge: `flags` beat `env` beat `self` (file values).
    pub fn merge(&self, env: &RunConfig, flags: &RunConfig) -> (RunConfig, Provenance) {
        let mut out = RunConfig::default();
        let mut prov = Provenance::new();
        macro_rules! field {
            ($name:ident) => {
                if flags.$name.is_some() {
                    out.$name = flags.$name.clone();
                    prov.insert(stringify!($name).to_string(), "flag");
                } else if env.$name.is_some() {
                    out.$name = env.$name.clone();
                    prov.insert(stringify!($name).to_string(), "env");
                } else if self.$name.is_some() {
                    out.$name = self.$name.clone();
                    prov.insert(stringify!($name).to_string(), "file");
                }
            };
        }
        field!(dataset_root);
        field!(out_root);
        field!(family);
        field!(unfrozen_backbone_blocks);
        field!(seed);
        field!(epochs);
        field!(batch_size);
        field!(learning_rate);
        field!(gamma);
        field!(tiny_base);
        field!(input_size);
        field!(gap_threshold);
        field!(synth);
        (out, prov)
    }

    fn from_env() -> RunConfig {
        RunConfig {
            dataset_root: std::env::var_os(DATASET_ROOT_ENV).map(PathBuf::from),
            ..RunConfig::default()
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }
}

/// `<out_root>/run-<unix seconds>-<config hash>`.
pub fn run_dir(out_root: &Path, cfg: &RunConfig) -> PathBuf {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    out_root.join(format!("run-{secs}-{}", cfg.hash()))
}

/// Echoes the resolved config and its provenance into `dir/config.json`.
pub fn echo_config(dir: &Path, cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    #[derive(Serialize)]
    struct Echo<'a> {
        config: &'a RunConfig,
        provenance: &'a Provenance,
    }
    let path = dir.join("config.json");
    let json = serde_json::to_string_pretty(&Echo { config: cfg, provenance: prov })?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        other => Err(Error::Invalid {
            what: "split",
            msg: format!("{other:?} (expected \"train\" or \"val\")"),
        }),
    }
}

fn parse_granularity(s: &str) -> Result<Granularity> {
    match s {
        "clip" => Ok(Granularity::Clip),
        "frame" => Ok(Granularity::Frame),
        other => Err(Error::Invalid {
            what: "granularity",
            msg: format!("{other:?} (expected \"clip\" or \"frame\")"),
        }),
    }
}

#[derive(Debug, Parser)]
#[command(name = "dvbseq", about = "Drone-vs-bird track sequence classification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a clip dataset from track files and frame directories.
    BuildDataset(BuildDatasetArgs),
    /// Generate a synthetic clip dataset with a temporal-only class signal.
    Synth(SynthArgs),
    /// Train a model on a built dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Report parameter counts per family and freeze policy.
    Params(ParamsArgs),
    /// Render metrics of one or more runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct BuildDatasetArgs {
    /// Track records, one JSON object per line.
    #[arg(long)]
    tracks: PathBuf,
    /// Directory containing one frame directory per video id.
    #[arg(long)]
    frames_root: PathBuf,
    /// JSON object mapping video id to "train" or "val".
    #[arg(long)]
    split_file: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Tracks split where this many consecutive predicted-only frames occur.
    #[arg(long, default_value_t = crate::seqdataset::DEFAULT_GAP_THRESHOLD)]
    gap_threshold: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Optional config file with a "synth" section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    clips_per_class: Option<usize>,
    #[arg(long)]
    val_clips_per_class: Option<usize>,
    #[arg(long)]
    frames_per_clip: Option<usize>,
    #[arg(long)]
    frame_size: Option<u32>,
    #[arg(long)]
    crop_size: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built dataset root (falls back to config file / DVBSEQ_DATASET_ROOT).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// One of: image_resnet18, r2plus1d, resnet18_lstm, resnet18_mlp,
    /// resnet18_transformer.
    #[arg(long)]
    family: Option<String>,
    /// Unfrozen backbone blocks; 0 = transfer learning (default).
    #[arg(long)]
    freeze: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Reduced backbone width (stem channels) for CPU-scale runs.
    #[arg(long)]
    tiny: Option<usize>,
    /// Model input resolution; 224 uses the published pipeline.
    #[arg(long)]
    input_size: Option<u32>,
    /// Explicit run directory (default: <out_root>/run-<time>-<hash>).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue from the `last` checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Weight checkpoint; a `model.json` describing the architecture must sit
    /// next to it.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "val")]
    split: String,
    /// clip | frame (defaults to the family's native granularity).
    #[arg(long)]
    granularity: Option<String>,
    /// Temporal voting windows per clip for sequence models.
    #[arg(long, default_value_t = 1)]
    windows: usize,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ParamsArgs {
    #[arg(long)]
    family: Option<String>,
    /// Unfrozen backbone blocks (default 0).
    #[arg(long)]
    freeze: Option<usize>,
    /// Emit all nine published table rows.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directories (training output and/or eval output).
    #[arg(long, required = true, num_args = 1..)]
    run_dir: Vec<PathBuf>,
}

/// Architecture sidecar written next to checkpoints so `eval` can rebuild the
/// model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub spec: ModelSpec,
    pub policy: FreezePolicy,
    pub input_size: u32,
}

impl ModelSidecar {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("model.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn transform_for(family: ModelFamily, input_size: u32) -> TransformConfig {
    let stats = if family.is_sequence() {
        NormalizationStats::video()
    } else {
        NormalizationStats::image()
    };
    if input_size == 224 {
        if family.is_sequence() {
            TransformConfig::video()
        } else {
            TransformConfig::image()
        }
    } else {
        TransformConfig::scaled_to(input_size, stats)
    }
}

fn spec_for(family: ModelFamily, tiny_base: Option<usize>) -> ModelSpec {
    match tiny_base {
        Some(base) => ModelSpec::tiny(family, base),
        None => ModelSpec::full(family),
    }
}

pub fn cmd_build_dataset(
    tracks_path: &Path,
    frames_root: &Path,
    split_file: &Path,
    out: &Path,
    gap_threshold: usize,
) -> Result<DatasetManifest> {
    if !split_file.exists() {
        return Err(Error::Invalid {
            what: "split file",
            msg: format!(
                "{} not found; provide a JSON object mapping each video id to \"train\" or \"val\"",
                split_file.display()
            ),
        });
    }
    let tracks = load_tracks(tracks_path)?;
    let raw: BTreeMap<String, String> = serde_json::from_slice(
        &std::fs::read(split_file).map_err(|e| Error::io(split_file, e))?,
    )?;
    let mut split_map = BTreeMap::new();
    for (video, split) in raw {
        split_map.insert(video, parse_split(&split)?);
    }
    let frames_root = frames_root.to_path_buf();
    let store_for_video = move |video_id: &str| -> Result<Box<dyn VideoFrameStore>> {
        Ok(Box::new(ImageDirStore::open(video_id, frames_root.join(video_id))?))
    };
    build_dataset(&tracks, &store_for_video, &split_map, out, gap_threshold)
}

/// One line per split/class plus totals, for quick inspection of a build.
pub fn manifest_summary(manifest: &DatasetManifest) -> String {
    let mut out = String::new();
    for split in [Split::Train, Split::Val] {
        let stats = manifest.stats.split(split);
        for label in [Label::Drone, Label::Bird] {
            let c = stats.class(label);
            let _ = writeln!(
                out,
                "{:<5} {:<5}  tracks {:>5}  sequences {:>5}  frames {:>8}",
                split.as_str(),
                label.as_str(),
                c.tracks,
                c.sequences,
                c.frames
            );
        }
        let _ = writeln!(out, "{:<5} total  frames {:>8}", split.as_str(), stats.total_frames());
    }
    out
}

fn synth_config_from(args: &SynthArgs) -> Result<SynthConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?.synth.unwrap_or_default(),
        None => SynthConfig::default(),
    };
    if let Some(v) = args.clips_per_class {
        cfg.train_clips_per_class = v;
    }
    if let Some(v) = args.val_clips_per_class {
        cfg.val_clips_per_class = v;
    }
    if let Some(v) = args.frames_per_clip {
        cfg.frames_per_clip = v;
    }
    if let Some(v) = args.frame_size {
        cfg.frame_size = v;
    }
    if let Some(v) = args.crop_size {
        cfg.crop_size = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

struct TrainSetup {
    model: Model,
    train_cfg: TrainConfig,
    transform: TransformConfig,
    dataset: ClipDataset,
    out_dir: PathBuf,
    resolved: RunConfig,
    provenance: Provenance,
}

fn prepare_train(args: &TrainArgs) -> Result<TrainSetup> {
    let file_cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let flag_cfg = RunConfig {
        dataset_root: args.dataset.clone(),
        family: args.family.as_deref().map(str::parse).transpose()?,
        unfrozen_backbone_blocks: args.freeze,
        seed: args.seed,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        tiny_base: args.tiny,
        input_size: args.input_size,
        ..RunConfig::default()
    };
    let (resolved, provenance) = file_cfg.merge(&RunConfig::from_env(), &flag_cfg);
    let family = resolved.family.ok_or(Error::Invalid {
        what: "train arguments",
        msg: "no model family given (--family or config file)".into(),
    })?;
    let dataset_root = resolved.dataset_root.clone().ok_or(Error::Invalid {
        what: "train arguments",
        msg: format!("no dataset given (--dataset, config file, or ${DATASET_ROOT_ENV})"),
    })?;
    let dataset = ClipDataset::open(&dataset_root)?;
    let policy = FreezePolicy {
        unfrozen_backbone_blocks: resolved.unfrozen_backbone_blocks.unwrap_or(0),
    };
    let spec = spec_for(family, resolved.tiny_base);
    let mut train_cfg = TrainConfig::for_family(family);
    train_cfg.seed = resolved.seed.unwrap_or(0);
    if let Some(v) = resolved.epochs {
        train_cfg.epochs = v;
        // Keep the schedule invariant satisfied for short runs.
        if train_cfg.decay_epoch >= v {
            train_cfg.decay_epoch = v.saturating_sub(1).max(train_cfg.warmup_epochs + 1);
        }
    }
    if let Some(v) = resolved.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = resolved.learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = resolved.gamma {
        train_cfg.gamma = v;
    }
    let input_size = resolved.input_size.unwrap_or(224);
    let transform = transform_for(family, input_size);
    let out_dir = match &args.out_dir {
        Some(dir) => dir.clone(),
        None => run_dir(resolved.out_root.as_deref().unwrap_or(Path::new("runs")), &resolved),
    };
    let model = build_model(&spec, policy, &Device::Cpu, DType::F32, train_cfg.seed)?;
    echo_config(&out_dir, &resolved, &provenance)?;
    ModelSidecar { spec, policy, input_size }.save(&out_dir)?;
    Ok(TrainSetup { model, train_cfg, transform, dataset, out_dir, resolved, provenance })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let setup = prepare_train(args)?;
    let _ = (&setup.resolved, &setup.provenance);
    let state = train(
        &setup.model,
        &setup.dataset,
        &setup.train_cfg,
        &setup.transform,
        &setup.out_dir,
        args.resume,
    )?;
    println!("{}", render_metrics(&load_metrics(&setup.out_dir)?));
    println!(
        "finished after epoch {} (best val macro F1 {:.4}); checkpoints in {}",
        state.epoch,
        state.best_val_macro_f1,
        setup.out_dir.display()
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    if !args.checkpoint.exists() {
        return Err(Error::Invalid {
            what: "checkpoint",
            msg: format!("{} not found", args.checkpoint.display()),
        });
    }
    let ckpt_dir = args.checkpoint.parent().unwrap_or(Path::new("."));
    let sidecar = ModelSidecar::load(ckpt_dir)?;
    let env = RunConfig::from_env();
    let dataset_root = args
        .dataset
        .clone()
        .or(env.dataset_root)
        .ok_or(Error::Invalid {
            what: "eval arguments",
            msg: format!("no dataset given (--dataset or ${DATASET_ROOT_ENV})"),
        })?;
    let dataset = ClipDataset::open(&dataset_root)?;
    let split = parse_split(&args.split)?;
    let want = args.granularity.as_deref().map(parse_granularity).transpose()?;
    let model = build_model(&sidecar.spec, sidecar.policy, &Device::Cpu, DType::F32, 0)?;
    model.load_weights(&args.checkpoint)?;
    let transform = transform_for(sidecar.spec.family, sidecar.input_size);
    let opts = EvalOptions { batch_size: args.batch_size.unwrap_or(16), windows: args.windows };
    let report = evaluate_as(&model, &dataset, split, &transform, &opts, want)?;
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| ckpt_dir.join(format!("eval-{}", split.as_str())));
    render_report(&report, &out_dir)?;
    print!("{}", render_text(&report));
    println!("report written to {}", out_dir.display());
    Ok(report)
}

/// The nine published table rows: four families in both transfer and
/// fine-tune settings, plus the (2+1)D model fine-tuned.
pub fn table_rows() -> Vec<(ModelFamily, FreezePolicy)> {
    let mut rows = Vec::new();
    for family in ModelFamily::ALL {
        if family != ModelFamily::R2plus1d {
            rows.push((family, FreezePolicy::transfer()));
        }
        rows.push((family, FreezePolicy::fine_tune(family)));
    }
    rows
}

pub fn param_reports(rows: &[(ModelFamily, FreezePolicy)]) -> Result<Vec<ParamReport>> {
    rows.iter()
        .map(|&(family, policy)| {
            let model = build_model(&ModelSpec::full(family), policy, &Device::Cpu, DType::F32, 0)?;
            Ok(model.count_params())
        })
        .collect()
}

fn cmd_params(args: &ParamsArgs) -> Result<()> {
    let rows = if args.all {
        table_rows()
    } else {
        let family: ModelFamily = args
            .family
            .as_deref()
            .ok_or(Error::Invalid {
                what: "params arguments",
                msg: "pass --family or --all".into(),
            })?
            .parse()?;
        let policy = FreezePolicy {
            unfrozen_backbone_blocks: args.freeze.unwrap_or(0),
        };
        vec![(family, policy)]
    };
    let reports = param_reports(&rows)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        for report in &reports {
            print!("{}", report.render_text());
        }
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut eval_rows: Vec<(String, EvalReport)> = Vec::new();
    for dir in &args.run_dir {
        if dir.join("metrics.jsonl").exists() {
            println!("== training metrics: {}", dir.display());
            print!("{}", render_metrics(&load_metrics(dir)?));
        }
        // Pick up eval reports in the run dir and one level below.
        let mut candidates = vec![dir.clone()];
        if let Ok(entries) = std::fs::read_dir(dir) {
            candidates.extend(entries.flatten().map(|e| e.path()).filter(|p| p.is_dir()));
        }
        for cand in candidates {
            let metrics = cand.join("metrics.json");
            if metrics.exists() {
                let bytes = std::fs::read(&metrics).map_err(|e| Error::io(&metrics, e))?;
                let report: EvalReport = serde_json::from_slice(&bytes)?;
                eval_rows.push((cand.display().to_string(), report));
            }
        }
    }
    if !eval_rows.is_empty() {
        println!("== evaluation reports");
        print!("{}", render_comparison(&eval_rows));
    }
    Ok(())
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::BuildDataset(args) => {
            let manifest = cmd_build_dataset(
                &args.tracks,
                &args.frames_root,
                &args.split_file,
                &args.out,
                args.gap_threshold,
            )?;
            print!("{}", manifest_summary(&manifest));
            println!("manifest written to {}", args.out.join("manifest.json").display());
            Ok(())
        }
        Command::Synth(args) => {
            let cfg = synth_config_from(args)?;
            let manifest = generate(&cfg, &args.out)?;
            print!("{}", manifest_summary(&manifest));
            println!("dataset written to {}", args.out.display());
            Ok(())
        }
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args).map(|_| ()),
        Command::Params(args) => cmd_params(args),
        Command::Report(args) => cmd_report(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_precedence_and_provenance() {
        let file = RunConfig {
            seed: Some(1),
            epochs: Some(5),
            dataset_root: Some("file-root".into()),
            ..RunConfig::default()
        };
        let env = RunConfig { dataset_root: Some("env-root".into()), ..RunConfig::default() };
        let flags = RunConfig { seed: Some(9), ..RunConfig::default() };
        let (merged, prov) = file.merge(&env, &flags);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.epochs, Some(5));
        assert_eq!(merged.dataset_root, Some("env-root".into()));
        assert_eq!(prov.get("seed"), Some(&"flag"));
        assert_eq!(prov.get("epochs"), Some(&"file"));
        assert_eq!(prov.get("dataset_root"), Some(&"env"));
        assert_eq!(prov.get("family"), None);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"learning_rte": 0.1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn config_hash_stable_and_sensitive() {
        let a = RunConfig { seed: Some(1), ..RunConfig::default() };
        let b = RunConfig { seed: Some(1), ..RunConfig::default() };
        let c = RunConfig { seed: Some(2), ..RunConfig::default() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 8);
    }

    #[test]
    fn run_dir_contains_hash() {
        let cfg = RunConfig::default();
        let dir = run_dir(Path::new("/tmp/x"), &cfg);
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        assert!(name.starts_with("run-"));
        assert!(name.ends_with(&cfg.hash()));
    }

    #[test]
    fn split_and_granularity_parsing() {
        assert_eq!(parse_split("train").unwrap(), Split::Train);
        assert_eq!(parse_split("val").unwrap(), Split::Val);
        assert!(parse_split("test").is_err());
        assert_eq!(parse_granularity("clip").unwrap(), Granularity::Clip);
        assert!(parse_granularity("track").is_err());
    }

    #[test]
    fn table_has_nine_rows() {
        let rows = table_rows();
        assert_eq!(rows.len(), 9);
        assert_eq!(
            rows.iter()
                .filter(|(f, p)| *f == ModelFamily::R2plus1d
                    && p.unfrozen_backbone_blocks == 0)
                .count(),
            0
        );
    }

    #[test]
    fn missing_split_file_hint() {
        let err = cmd_build_dataset(
            Path::new("/nonexistent/tracks.jsonl"),
            Path::new("/nonexistent/frames"),
            Path::new("/nonexistent/split.json"),
            Path::new("/tmp/out"),
            10,
        )
        .unwrap_err();
        assert!(err.to_string().contains("train"), "{err}");
    }

    #[test]
    fn cli_help_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
