//! Training recipe: focal loss, per-family optimizer selection, warmup +
//! step-decay schedule, and a resumable epoch loop with atomic checkpoints.
//!
//! Optimizer updates run on the host in f64 and their state is part of the
//! checkpoint, so an interrupted run resumed from disk retraces the original
//! run exactly (single worker, same seeds).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var, D};
use serde::{Deserialize, Serialize};

use crate::clipsampling::{epoch_plan, load_batch, ClipDataset, CollateMode, TransformConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalOptions};
use crate::models::{Model, ModelFamily};
use crate::seqdataset::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay (AdamW).
    AdaptiveDecoupledWeightDecay,
    /// Plain stochastic gradient descent; momentum configurable, default 0.
    PlainSgd,
}

/// Per-family optimizer choice: the adaptive optimizer for the image, LSTM
/// and (2+1)D models; SGD for the MLP and transformer sequence models.
pub fn select_optimizer(family: ModelFamily) -> OptimizerKind {
    match family {
        ModelFamily::ImageResnet18 | ModelFamily::Resnet18Lstm | ModelFamily::R2plus1d => {
            OptimizerKind::AdaptiveDecoupledWeightDecay
        }
        ModelFamily::Resnet18Mlp | ModelFamily::Resnet18Transformer => OptimizerKind::PlainSgd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    /// Focal-loss focusing exponent.
    pub gamma: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// The published recipe for one family: lr 1e-4, 12 epochs, 1 warmup
    /// epoch, x0.1 decay at epoch 8, focal gamma 2; batch size 8 for the
    /// (2+1)D model, 128 for the image model, 16 for Type 2 models.
    pub fn for_family(family: ModelFamily) -> Self {
        let optimizer = select_optimizer(family);
        Self {
            optimizer,
            learning_rate: 1e-4,
            epochs: 12,
            warmup_epochs: 1,
            decay_epoch: 8,
            decay_factor: 0.1,
            batch_size: match family {
                ModelFamily::R2plus1d => 8,
                ModelFamily::ImageResnet18 => 128,
                _ => 16,
            },
            gamma: 2.0,
            weight_decay: match optimizer {
                OptimizerKind::AdaptiveDecoupledWeightDecay => 0.01,
                OptimizerKind::PlainSgd => 0.0,
            },
            momentum: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.warmup_epochs < self.decay_epoch && self.decay_epoch < self.epochs) {
            return Err(format!(
                "need warmup_epochs < decay_epoch < epochs, got {} / {} / {}",
                self.warmup_epochs, self.decay_epoch, self.epochs
            ));
        }
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err("learning_rate and batch_size must be positive".into());
        }
        if self.gamma < 0.0 {
            return Err(format!("gamma must be >= 0, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Learning rate at a real-valued epoch progress: linear warmup from 0 over
/// the warmup epochs, constant at the base rate, then decayed from the decay
/// epoch onward.
pub fn lr_at(cfg: &TrainConfig, epoch: f64) -> f64 {
    let warmup = cfg.warmup_epochs as f64;
    if epoch < warmup {
        cfg.learning_rate * epoch / warmup
    } else if epoch < cfg.decay_epoch as f64 {
        cfg.learning_rate
    } else {
        cfg.learning_rate * cfg.decay_factor
    }
}

/// Mean over the batch of -(1 - p_t)^gamma * log(p_t) where p_t is the
/// softmax probability of the true class. gamma = 0 reduces to
/// cross-entropy.
pub fn focal_loss(scores: &Tensor, labels: &Tensor, gamma: f64) -> Result<Tensor> {
    let (b, _o) = scores.dims2()?;
    let probe: Vec<f32> = scores.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    if probe.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid { what: "focal loss input", msg: "non-finite scores".into() });
    }
    let log_p = candle_nn::ops::log_softmax(scores, D::Minus1)?;
    let labels = labels.reshape((b, 1))?;
    let log_pt = log_p.gather(&labels.to_dtype(DType::U32)?, 1)?.squeeze(1)?;
    let loss = if gamma == 0.0 {
        log_pt.neg()?
    } else {
        let pt = log_pt.exp()?;
        let focus = (1.0 - pt)?.powf(gamma)?;
        (focus * log_pt.neg()?)?
    };
    Ok(loss.mean_all()?)
}

/// Per-parameter moment buffers; SGD only uses `m` (momentum), the adaptive
/// optimizer uses both.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct Slots {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    slots: BTreeMap<String, Slots>,
}

/// Hand-rolled optimizer working on named vars. Updates run in f64 on the
/// host so that state round-trips exactly through the checkpoint.
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub momentum: f64,
    pub state: OptimizerState,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, momentum: f64) -> Self {
        Self { kind, weight_decay, momentum, state: OptimizerState::default() }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.optimizer, cfg.weight_decay, cfg.momentum)
    }

    pub fn step(&mut self, lr: f64, vars: &[(String, Var)], grads: &GradStore) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step;
        for (name, var) in vars {
            let Some(grad) = grads.get(var) else { continue };
            let g: Vec<f64> = grad.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
            let mut p: Vec<f64> = var
                .as_tensor()
                .flatten_all()?
                .to_dtype(DType::F64)?
                .to_vec1()?;
            let slots = self
                .state
                .slots
                .entry(name.clone())
                .or_insert_with(|| Slots { m: vec![0.0; g.len()], v: vec![0.0; g.len()] });
            match self.kind {
                OptimizerKind::AdaptiveDecoupledWeightDecay => {
                    let bc1 = 1.0 - BETA1.powi(t as i32);
                    let bc2 = 1.0 - BETA2.powi(t as i32);
                    for i in 0..g.len() {
                        // Decoupled weight decay acts on the parameter directly.
                        p[i] -= lr * self.weight_decay * p[i];
                        slots.m[i] = BETA1 * slots.m[i] + (1.0 - BETA1) * g[i];
                        slots.v[i] = BETA2 * slots.v[i] + (1.0 - BETA2) * g[i] * g[i];
                        let m_hat = slots.m[i] / bc1;
                        let v_hat = slots.v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
                OptimizerKind::PlainSgd => {
                    for i in 0..g.len() {
                        let step = if self.momentum > 0.0 {
                            slots.m[i] = self.momentum * slots.m[i] + g[i];
                            slots.m[i]
                        } else {
                            g[i]
                        };
                        p[i] -= lr * step;
                    }
                }
            }
            let updated = Tensor::from_vec(p, var.shape().dims(), var.device())?
                .to_dtype(var.dtype())?;
            var.set(&updated)?;
        }
        Ok(())
    }
}

/// Everything needed to resume a run, minus the weights (stored alongside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub best_val_macro_f1: f64,
    pub optimizer: OptimizerState,
}

impl TrainState {
    fn fresh() -> Self {
        Self { epoch: 0, global_step: 0, best_val_macro_f1: f64::NEG_INFINITY, optimizer: OptimizerState::default() }
    }
}

/// One line of the append-only metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub val_macro_f1: f64,
    pub is_best: bool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn save_checkpoint(model: &Model, state: &TrainState, dir: &Path, stem: &str) -> Result<()> {
    let weights = dir.join(format!("{stem}.safetensors"));
    let tmp = weights.with_extension("tmp");
    model.save_weights(&tmp)?;
    std::fs::rename(&tmp, &weights).map_err(|e| Error::io(&weights, e))?;
    write_atomic(
        &dir.join(format!("{stem}.state.json")),
        serde_json::to_string_pretty(state)?.as_bytes(),
    )
}

pub fn load_state(dir: &Path, stem: &str) -> Result<TrainState> {
    let path = dir.join(format!("{stem}.state.json"));
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Runs (or resumes) the epoch loop: shuffled augmented train batches, one
/// deterministic validation pass per epoch, `last` and `best` (by val macro
/// F1) checkpoints, and one metrics line per epoch appended to
/// `metrics.jsonl`.
pub fn train(
    model: &Model,
    ds: &ClipDataset,
    cfg: &TrainConfig,
    transform: &TransformConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainState> {
    train_until(model, ds, cfg, transform, out_dir, resume, None)
}

/// [`train`] with an early stop after `stop_after` completed epochs; the
/// schedule still follows `cfg.epochs`, so a stopped-and-resumed run retraces
/// an uninterrupted one exactly.
pub fn train_until(
    model: &Model,
    ds: &ClipDataset,
    cfg: &TrainConfig,
    transform: &TransformConfig,
    out_dir: &Path,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<TrainState> {
    cfg.validate().map_err(|msg| Error::Invalid { what: "train config", msg })?;
    transform.validate().map_err(|msg| Error::Invalid { what: "transform config", msg })?;
    for split in [Split::Train, Split::Val] {
        if ds.manifest.clips_in(split).next().is_none() {
            return Err(Error::Invalid {
                what: "dataset",
                msg: format!("split {split:?} is empty"),
            });
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut state = if resume {
        let state = load_state(out_dir, "last")?;
        model.load_weights(&out_dir.join("last.safetensors"))?;
        state
    } else {
        TrainState::fresh()
    };
    let mut optimizer = Optimizer::from_config(cfg);
    optimizer.state = state.optimizer.clone();
    let mode = if model.spec.family.is_sequence() {
        CollateMode::Sequence
    } else {
        CollateMode::Image
    };
    let vars = model.trainable_vars();
    let eval_opts = EvalOptions { batch_size: cfg.batch_size, windows: 1 };

    let end_epoch = cfg.epochs.min(stop_after.unwrap_or(usize::MAX));
    for epoch in state.epoch..end_epoch {
        let plan = epoch_plan(ds, Split::Train, mode, cfg.batch_size, cfg.seed, epoch as u64, true);
        let steps = plan.len().max(1);
        let mut loss_sum = 0.0f64;
        let mut lr = lr_at(cfg, epoch as f64);
        for (step, keys) in plan.iter().enumerate() {
            lr = lr_at(cfg, epoch as f64 + step as f64 / steps as f64);
            let batch = load_batch(
                ds,
                keys,
                mode,
                transform,
                model.spec.num_frames,
                true,
                &model.device,
            )?;
            let scores = model.forward(&batch.pixels, true)?;
            let labels = batch.label_tensor(&model.device)?;
            let loss = focal_loss(&scores.to_dtype(DType::F32)?, &labels, cfg.gamma)?;
            let loss_val: f32 = loss.to_scalar()?;
            if !loss_val.is_finite() {
                return Err(Error::msg(format!(
                    "non-finite loss {loss_val} at epoch {epoch} step {step} (lr {lr:.3e}, batch [{}])",
                    batch.clip_ids.join(", ")
                )));
            }
            loss_sum += loss_val as f64;
            let grads = loss.backward()?;
            optimizer.step(lr, &vars, &grads)?;
            state.global_step += 1;
        }
        let report = evaluate(model, ds, Split::Val, transform, &eval_opts)?;
        let is_best = report.f1_macro > state.best_val_macro_f1;
        if is_best {
            state.best_val_macro_f1 = report.f1_macro;
        }
        state.epoch = epoch + 1;
        state.optimizer = optimizer.state.clone();
        save_checkpoint(model, &state, out_dir, "last")?;
        if is_best {
            save_checkpoint(model, &state, out_dir, "best")?;
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / plan.len().max(1) as f64,
            lr,
            val_macro_f1: report.f1_macro,
            is_best,
        };
        let mut line = serde_json::to_string(&metrics)?;
        line.push('\n');
        let log = out_dir.join("metrics.jsonl");
        use std::io::Write;
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|e| Error::io(&log, e))?;
    }
    Ok(state)
}

/// Reads the metrics log back as structured records.
pub fn load_metrics(out_dir: &Path) -> Result<Vec<EpochMetrics>> {
    let path = out_dir.join("metrics.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

/// Renders metrics lines as a small table.
pub fn render_metrics(metrics: &[EpochMetrics]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>5} {:>12} {:>10} {:>12} {:>5}", "epoch", "train_loss", "lr", "val_macro_f1", "best");
    for m in metrics {
        let _ = writeln!(
            out,
            "{:>5} {:>12.5} {:>10.2e} {:>12.4} {:>5}",
            m.epoch, m.train_loss, m.lr, m.val_macro_f1, if m.is_best { "*" } else { "" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use std::collections::BTreeMap as Map;

    fn cfg() -> TrainConfig {
        TrainConfig::for_family(ModelFamily::ImageResnet18)
    }

    #[test]
    fn optimizer_selection_per_family() {
        use OptimizerKind::*;
        assert_eq!(select_optimizer(ModelFamily::ImageResnet18), AdaptiveDecoupledWeightDecay);
        assert_eq!(select_optimizer(ModelFamily::Resnet18Lstm), AdaptiveDecoupledWeightDecay);
        assert_eq!(select_optimizer(ModelFamily::R2plus1d), AdaptiveDecoupledWeightDecay);
        assert_eq!(select_optimizer(ModelFamily::Resnet18Mlp), PlainSgd);
        assert_eq!(select_optimizer(ModelFamily::Resnet18Transformer), PlainSgd);
    }

    #[test]
    fn lr_schedule_examples() {
        let c = cfg();
        assert!((lr_at(&c, 0.5) - 5e-5).abs() < 1e-12);
        assert!((lr_at(&c, 4.0) - 1e-4).abs() < 1e-12);
        assert!((lr_at(&c, 9.0) - 1e-5).abs() < 1e-12);
        assert_eq!(lr_at(&c, 0.0), 0.0);
    }

    #[test]
    fn lr_schedule_shape() {
        let c = cfg();
        // Continuous at the warmup boundary, max is the configured lr.
        assert!((lr_at(&c, 1.0 - 1e-9) - lr_at(&c, 1.0)).abs() < 1e-10);
        let mut max = 0.0f64;
        let mut prev = -1.0;
        for i in 0..=1200 {
            let e = i as f64 * 0.01;
            let lr = lr_at(&c, e);
            max = max.max(lr);
            // Nondecreasing until decay, then a single drop.
            if e < c.decay_epoch as f64 {
                assert!(lr >= prev - 1e-15);
            }
            prev = lr;
        }
        assert_eq!(max, c.learning_rate);
        // Discontinuity exactly at the decay epoch.
        assert!(lr_at(&c, 8.0 - 1e-9) > lr_at(&c, 8.0));
    }

    #[test]
    fn config_invariant_enforced() {
        let mut c = cfg();
        c.decay_epoch = 13;
        assert!(c.validate().is_err());
        c.decay_epoch = 8;
        c.warmup_epochs = 8;
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    fn scores(rows: &[[f32; 2]]) -> Tensor {
        Tensor::from_vec(
            rows.iter().flatten().copied().collect::<Vec<f32>>(),
            (rows.len(), 2),
            &Device::Cpu,
        )
        .unwrap()
    }

    fn labels(idx: &[u32]) -> Tensor {
        Tensor::from_vec(idx.to_vec(), idx.len(), &Device::Cpu).unwrap()
    }

    #[test]
    fn focal_gamma0_uniform_is_ln2() {
        let loss: f32 = focal_loss(&scores(&[[0.0, 0.0]]), &labels(&[0]), 0.0)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn focal_pt_one_is_zero() {
        let loss: f32 = focal_loss(&scores(&[[50.0, -50.0]]), &labels(&[0]), 2.0)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!(loss.abs() < 1e-7, "{loss}");
    }

    #[test]
    fn focal_gamma2_pt09() {
        // Logits chosen so softmax gives exactly p_t = 0.9.
        let s = scores(&[[0.9f32.ln(), 0.1f32.ln()]]);
        let loss: f32 = focal_loss(&s, &labels(&[0]), 2.0).unwrap().to_scalar().unwrap();
        assert!((loss - 1.0536e-3).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn focal_gamma0_equals_cross_entropy() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(1..16);
            let rows: Vec<[f32; 2]> =
                (0..n).map(|_| [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]).collect();
            let lab: Vec<u32> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let loss: f32 =
                focal_loss(&scores(&rows), &labels(&lab), 0.0).unwrap().to_scalar().unwrap();
            // Host-side cross-entropy reference.
            let mut want = 0.0f64;
            for (row, &l) in rows.iter().zip(&lab) {
                let m = row[0].max(row[1]) as f64;
                let z = ((row[0] as f64 - m).exp() + (row[1] as f64 - m).exp()).ln() + m;
                want += z - row[l as usize] as f64;
            }
            want /= n as f64;
            assert!((loss as f64 - want).abs() < 1e-6, "{loss} vs {want}");
        }
    }

    #[test]
    fn focal_monotone_decreasing_in_pt() {
        for &gamma in &[0.0, 0.5, 2.0, 5.0] {
            let mut prev = f32::INFINITY;
            for i in 1..20 {
                let pt = i as f32 / 20.0;
                let s = scores(&[[pt.ln(), (1.0 - pt).ln()]]);
                let loss: f32 = focal_loss(&s, &labels(&[0]), gamma).unwrap().to_scalar().unwrap();
                assert!(loss < prev, "gamma {gamma} pt {pt}: {loss} !< {prev}");
                prev = loss;
            }
        }
    }

    #[test]
    fn focal_rejects_non_finite() {
        let s = scores(&[[f32::NAN, 0.0]]);
        assert!(focal_loss(&s, &labels(&[0]), 2.0).is_err());
    }

    #[test]
    fn optimizer_state_roundtrips_exactly() {
        let mut state = OptimizerState { step: 17, slots: Map::new() };
        state.slots.insert(
            "head.weight".into(),
            Slots { m: vec![0.1, -2.0e-7, 3.456789e12], v: vec![1e-30, 0.0, 7.7] },
        );
        let json = serde_json::to_string(&state).unwrap();
        let back: OptimizerState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn sgd_step_matches_hand_computation() {
        let var = Var::from_tensor(
            &Tensor::from_vec(vec![1.0f32, 2.0], 2, &Device::Cpu).unwrap(),
        )
        .unwrap();
        // loss = sum(v^2) -> grad = 2v.
        let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = Optimizer::new(OptimizerKind::PlainSgd, 0.0, 0.0);
        opt.step(0.1, &[("p".into(), var.clone())], &grads).unwrap();
        let got: Vec<f32> = var.flatten_all().unwrap().to_vec1().unwrap();
        assert!((got[0] - 0.8).abs() < 1e-6 && (got[1] - 1.6).abs() < 1e-6, "{got:?}");
    }

    #[test]
    fn adamw_first_step_is_signed_unit_step() {
        // With fresh moments, mhat/sqrt(vhat) = sign(g) (up to eps), so the
        // first update moves each weight by ~lr against the gradient sign.
        let var = Var::from_tensor(
            &Tensor::from_vec(vec![1.0f32, -3.0], 2, &Device::Cpu).unwrap(),
        )
        .unwrap();
        let loss = var.as_tensor().sum_all().unwrap(); // grad = 1
        let grads = loss.backward().unwrap();
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveDecoupledWeightDecay, 0.0, 0.0);
        opt.step(0.01, &[("p".into(), var.clone())], &grads).unwrap();
        let got: Vec<f32> = var.flatten_all().unwrap().to_vec1().unwrap();
        assert!((got[0] - 0.99).abs() < 1e-4, "{got:?}");
        assert!((got[1] + 3.01).abs() < 1e-4, "{got:?}");
    }
}
