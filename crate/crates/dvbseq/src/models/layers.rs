//! Shared building blocks: batch norm with controllable running-stat updates,
//! conv helpers, and deterministic parameter initialization.

use candle_core::{DType, Tensor, Var};
use candle_nn::{BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Batch norm whose running statistics only move while the surrounding block
/// is trainable. Frozen blocks always normalize with their stored statistics,
/// so their state stays bit-identical through training.
#[derive(Clone)]
pub struct Bn {
    inner: BatchNorm,
    trainable: bool,
}

impl Bn {
    pub fn new(features: usize, trainable: bool, vb: VarBuilder) -> Result<Self> {
        let inner = candle_nn::batch_norm(features, BatchNormConfig::default(), vb)?;
        Ok(Self { inner, trainable })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        use candle_nn::ModuleT;
        Ok(self.inner.forward_t(x, train && self.trainable)?)
    }
}

pub fn conv2d(
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    vb: VarBuilder,
) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    };
    Ok(candle_nn::conv2d_no_bias(in_c, out_c, kernel, cfg, vb)?)
}

/// Stem max pool, 2x2 window, stride 2. Uses a 2x2 window (rather than the
/// overlapping 3x3) and is written as reshape + max reductions: candle's
/// dedicated max_pool2d rejects overlapping windows in backward and scales
/// the gradient down by the window area even for non-overlapping ones.
pub fn stem_max_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let x = x.narrow(2, 0, h - h % 2)?.narrow(3, 0, w - w % 2)?;
    let x = x.reshape((b, c, h / 2, 2, w / 2, 2))?.contiguous()?;
    Ok(x.max(5)?.max(3)?)
}

/// Mean over all dims after the channel dim: (B, C, ...) -> (B, C).
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let dims = x.dims().len();
    let mut out = x.clone();
    for d in (2..dims).rev() {
        out = out.mean(d)?;
    }
    Ok(out)
}

fn is_norm_scale(name: &str) -> bool {
    // Batch/layer norm gammas are the only rank-1 "weight" tensors.
    name.ends_with(".weight") || name == "weight"
}

/// Deterministically (re-)initializes every variable in the map from the
/// seed. Ordering is by variable name, so two builds of the same architecture
/// with the same seed are bit-identical.
pub fn init_params(varmap: &VarMap, seed: u64) -> Result<()> {
    let data = varmap.data().lock().unwrap();
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let var = &data[name];
        let shape = var.shape().clone();
        let dtype = var.dtype();
        let n: usize = shape.elem_count();
        let values: Vec<f64> = if name.ends_with("running_mean") {
            vec![0.0; n]
        } else if name.ends_with("running_var") {
            vec![1.0; n]
        } else if name.contains("pos_embedding") {
            (0..n).map(|_| gauss(&mut rng) * 0.02).collect()
        } else if shape.rank() >= 2 {
            // Conv / linear / recurrent weights: He uniform, +-sqrt(6/fan_in).
            let fan_in: usize = shape.dims()[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        } else if is_norm_scale(name) {
            vec![1.0; n]
        } else {
            // Biases and norm betas start at zero.
            vec![0.0; n]
        };
        let t = Tensor::from_vec(values, shape.dims(), var.device())?.to_dtype(dtype)?;
        var.set(&t)?;
    }
    Ok(())
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Casts a freshly built varmap to the requested dtype by rebuilding each var.
pub fn assert_dtype(varmap: &VarMap, dtype: DType) -> Result<()> {
    let data = varmap.data().lock().unwrap();
    for (name, var) in data.iter() {
        if var.dtype() != dtype {
            return Err(crate::error::Error::msg(format!(
                "variable {name} has dtype {:?}, expected {dtype:?}",
                var.dtype()
            )));
        }
    }
    Ok(())
}

/// Sum of elements of all non-buffer parameters under a name predicate.
pub fn count_vars(varmap: &VarMap, pred: impl Fn(&str) -> bool) -> u64 {
    let data = varmap.data().lock().unwrap();
    data.iter()
        .filter(|(name, _)| !name.ends_with("running_mean") && !name.ends_with("running_var"))
        .filter(|(name, _)| pred(name))
        .map(|(_, var)| var.shape().elem_count() as u64)
        .sum()
}

/// Named clones of vars passing the predicate, sorted by name.
pub fn select_vars(varmap: &VarMap, pred: impl Fn(&str) -> bool) -> Vec<(String, Var)> {
    let data = varmap.data().lock().unwrap();
    let mut out: Vec<(String, Var)> = data
        .iter()
        .filter(|(name, _)| pred(name))
        .map(|(name, var)| (name.clone(), var.clone()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
