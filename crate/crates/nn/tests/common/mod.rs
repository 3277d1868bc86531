#![allow(dead_code)]

use jepa_nn::{grad, no_grad, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative L2 error between two gradient tensors.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.sq_norm().sqrt().max(b.sq_norm().sqrt()).max(1e-8);
    diff / scale
}

/// Central finite differences of a scalar function of several tensors.
pub fn finite_diff(f: &dyn Fn(&[Var]) -> Result<Var>, inputs: &[Tensor], h: f64) -> Vec<Tensor> {
    let eval = |xs: &[Tensor]| -> f64 {
        no_grad(|| {
            let vars: Vec<Var> = xs.iter().cloned().map(Var::constant).collect();
            f(&vars).unwrap().value().item()
        })
    };
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += h;
            let up = eval(&xs);
            xs[i].data_mut()[j] -= 2.0 * h;
            let down = eval(&xs);
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Reverse-mode gradients of a scalar function.
pub fn autodiff(f: &dyn Fn(&[Var]) -> Result<Var>, inputs: &[Tensor]) -> Vec<Tensor> {
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    let y = f(&vars).unwrap();
    grad(&y, &vars, false).unwrap().into_iter().map(|g| g.value().clone()).collect()
}

/// Asserts reverse-mode matches finite differences for every input.
pub fn check_gradients(name: &str, f: &dyn Fn(&[Var]) -> Result<Var>, inputs: &[Tensor], tol: f64) {
    let ad = autodiff(f, inputs);
    let fd = finite_diff(f, inputs, 1e-5);
    for (i, (a, d)) in ad.iter().zip(&fd).enumerate() {
        let e = rel_err(a, d);
        assert!(e < tol, "{name}: input {i} relative error {e:.3e} exceeds {tol:.0e}");
    }
}

/// Contracts an arbitrary-shaped output to a scalar with fixed random weights.
pub fn project(y: &Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed ^ 0xABCD);
    let w = random_tensor(y.shape(), &mut r, 1.0);
    Ok(y.mul_const(&w)?.sum())
}
