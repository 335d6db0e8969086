//! Finite-difference verification of backpropagated gradients for every
//! model family, in f64 so the central-difference comparison is meaningful.

use candle_core::{DType, Device, Tensor, Var};
use dvbseq::models::{build_model, FreezePolicy, Model, ModelFamily, ModelSpec};
use dvbseq::training::focal_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;
const ABS_TOL: f64 = 1e-8;

fn tiny_model(family: ModelFamily) -> Model {
    let mut spec = ModelSpec::tiny(family, 4);
    spec.num_frames = 4;
    build_model(&spec, FreezePolicy::all_unfrozen(), &Device::Cpu, DType::F64, 11).unwrap()
}

fn random_batch(family: ModelFamily, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let shape: Vec<usize> = if family == ModelFamily::ImageResnet18 {
        vec![2, 3, 16, 16]
    } else {
        vec![2, 3, 4, 16, 16]
    };
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pixels = Tensor::from_vec(data, shape, &Device::Cpu).unwrap();
    let labels = Tensor::from_vec(vec![0u32, 1u32], (2,), &Device::Cpu).unwrap();
    (pixels, labels)
}

/// Loss under eval-mode batch norm so repeated evaluations are pure
/// functions of the parameters.
fn loss_value(model: &Model, pixels: &Tensor, labels: &Tensor) -> Tensor {
    let scores = model.forward(pixels, false).unwrap();
    focal_loss(&scores, labels, 2.0).unwrap()
}

fn set_coord(var: &Var, flat_index: usize, value: f64) {
    let shape = var.dims().to_vec();
    let mut data: Vec<f64> = var.flatten_all().unwrap().to_vec1().unwrap();
    data[flat_index] = value;
    var.set(&Tensor::from_vec(data, shape, &Device::Cpu).unwrap()).unwrap();
}

fn check_family(family: ModelFamily) {
    let model = tiny_model(family);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (pixels, labels) = random_batch(family, &mut rng);

    let loss = loss_value(&model, &pixels, &labels);
    let grads = loss.backward().unwrap();

    let vars = model.trainable_vars();
    assert!(!vars.is_empty());
    // Probe parameters from both ends and the middle of the network.
    let picks = [0, vars.len() / 2, vars.len() - 1];
    let mut checked = 0usize;
    for &vi in &picks {
        let (name, var) = &vars[vi];
        let analytic = grads
            .get(var)
            .unwrap_or_else(|| panic!("no gradient recorded for {name}"))
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let n = var.elem_count();
        let mut coords = vec![0, (n - 1) / 2, n - 1];
        coords.dedup();
        for &ci in &coords {
            let original: f64 = var.flatten_all().unwrap().to_vec1::<f64>().unwrap()[ci];
            set_coord(var, ci, original + H);
            let plus = loss_value(&model, &pixels, &labels).to_scalar::<f64>().unwrap();
            set_coord(var, ci, original - H);
            let minus = loss_value(&model, &pixels, &labels).to_scalar::<f64>().unwrap();
            set_coord(var, ci, original);
            let numeric = (plus - minus) / (2.0 * H);
            let diff = (analytic[ci] - numeric).abs();
            let scale = analytic[ci].abs().max(numeric.abs());
            assert!(
                diff <= ABS_TOL + REL_TOL * scale,
                "{family:?} {name}[{ci}]: analytic {} vs numeric {numeric}",
                analytic[ci]
            );
            checked += 1;
        }
    }
    assert!(checked >= 3, "too few coordinates probed for {family:?}");
}

#[test]
fn gradients_match_finite_differences_image() {
    check_family(ModelFamily::ImageResnet18);
}

#[test]
fn gradients_match_finite_differences_lstm() {
    check_family(ModelFamily::Resnet18Lstm);
}

#[test]
fn gradients_match_finite_differences_mlp() {
    check_family(ModelFamily::Resnet18Mlp);
}

#[test]
fn gradients_match_finite_differences_transformer() {
    check_family(ModelFamily::Resnet18Transformer);
}

#[test]
fn gradients_match_finite_differences_r2plus1d() {
    check_family(ModelFamily::R2plus1d);
}
