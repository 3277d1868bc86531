//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod gradient_suite;

use jepa_nn::{gradients, no_grad, Bindings, ParameterSet, Tensor, Var};
use ode_jepa::{ModelConfig, TrainingConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], r: &mut StdRng, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
}

/// A model on real 64×64 frames that trains in seconds.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        encoder_channels: vec![4, 8, 8],
        action_hidden: 16,
        action_blocks: 2,
        predictor_hidden: 32,
        ..ModelConfig::default()
    }
}

pub fn small_training(epochs: usize, seed: u64) -> TrainingConfig {
    TrainingConfig { model: small_model(), phase1_epochs: epochs, phase2_epochs: epochs, seed, ..TrainingConfig::default() }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are
/// below 1e-9.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.sq_norm().sqrt().max(b.sq_norm().sqrt());
    if scale < 1e-9 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences (h = 1e-5) of a scalar function of several tensors.
pub fn finite_difference(f: &dyn Fn(&[Var]) -> f64, inputs: &[Tensor]) -> Vec<Tensor> {
    let h = 1e-5;
    inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut out = Tensor::zeros(t.shape());
            for j in 0..t.numel() {
                let eval = |delta: f64| {
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(k, x)| {
                            let mut x = x.clone();
                            if k == i {
                                x.data_mut()[j] += delta;
                            }
                            Var::constant(x)
                        })
                        .collect();
                    no_grad(|| f(&vars))
                };
                out.data_mut()[j] = (eval(h) - eval(-h)) / (2.0 * h);
            }
            out
        })
        .collect()
}

/// Reverse-mode gradients of `f` compared with central differences.
/// Returns the largest relative error, or a message naming the offending input.
pub fn check_gradients(name: &str, f: &dyn Fn(&[Var]) -> Var, inputs: &[Tensor], tol: f64) -> Result<f64, String> {
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&vars);
    let ad = jepa_nn::grad(&out, &vars, false).map_err(|e| e.to_string())?;
    let fd = finite_difference(&|v| f(v).value().item(), inputs);
    let mut worst = 0.0f64;
    for (i, (a, n)) in ad.iter().zip(&fd).enumerate() {
        let e = rel_err(a.value(), n);
        if !(e < tol) {
            return Err(format!("{name}: input {i} relative error {e:.3e}"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// A loss over parameter sets, returning the bindings it read so gradients
/// can be collected.
pub type ParamLoss<'a> = dyn Fn(&[ParameterSet]) -> (Var, Vec<Bindings>) + 'a;

/// Reverse-mode parameter gradients compared with central differences, one
/// relative error per parameter tensor. Returns the largest.
pub fn check_parameter_gradients(name: &str, sets: &[ParameterSet], f: &ParamLoss<'_>, tol: f64) -> Result<f64, String> {
    let (loss, bindings) = f(sets);
    let refs: Vec<&Bindings> = bindings.iter().collect();
    let grads = gradients(&loss, &refs).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let h = 1e-5;
    for (si, set_grads) in grads.iter().enumerate() {
        for (pname, ad) in set_grads {
            let mut fd = Tensor::zeros(ad.shape());
            for j in 0..ad.numel() {
                let eval = |delta: f64| {
                    let mut moved = sets.to_vec();
                    moved[si].get_mut(pname).expect("parameter").value.data_mut()[j] += delta;
                    f(&moved).0.value().item()
                };
                fd.data_mut()[j] = (eval(h) - eval(-h)) / (2.0 * h);
            }
            let e = rel_err(ad, &fd);
            if !(e < tol) {
                return Err(format!("{name}: set {si} `{pname}` relative error {e:.3e}"));
            }
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// The contractive term of a probe encoder on 8×8 windows next to the
/// squared Frobenius norm of its Jacobian from central differences.
pub fn contractive_against_finite_differences(seed: u64) -> (f64, f64) {
    use jepa_nn::{Ctx, RngState};
    use ode_jepa::encoders::ObservationEncoder;

    let cfg = ModelConfig { image_size: 8, encoder_channels: vec![3, 4, 4], dropout: 0.0, ..ModelConfig::default() };
    let enc = ObservationEncoder::new(&cfg).expect("probe encoder");
    let ps = enc.init(&mut RngState::new(seed));
    let vars = ps.bind(false);
    let mut r = rng(seed);
    let windows = Tensor::from_fn(&[2, cfg.past_frames, 8, 8], |_| r.random::<f64>());
    let encode = |x: &Var| enc.forward(&mut Ctx::eval(&vars, ps.buffers()), x);

    let value = ode_jepa::losses::contractive_loss(
        |x| encode(x).map_err(|e| jepa_nn::NnError::Contract(e.to_string())),
        &windows,
        false,
    )
    .expect("contractive term")
    .value()
    .item();

    let h = 1e-5;
    let mut fd_sq = 0.0;
    for j in 0..windows.numel() {
        let eval = |delta: f64| {
            let mut x = windows.clone();
            x.data_mut()[j] += delta;
            no_grad(|| encode(&Var::constant(x)).expect("forward").value().clone())
        };
        let (up, down) = (eval(h), eval(-h));
        fd_sq += up.data().iter().zip(down.data()).map(|(a, b)| ((a - b) / (2.0 * h)).powi(2)).sum::<f64>();
    }
    (value, fd_sq / windows.shape()[0] as f64)
}
