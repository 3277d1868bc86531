//! Reverse-mode gradients, a gradient of a gradient, and a few Adam steps
//! on a linear layer fit to a known map.
//!
//! ```text
//! cargo run -p jepa-nn --example autodiff
//! ```

use jepa_nn::layers::Linear;
use jepa_nn::{gradients, grad, Adam, Ctx, ParameterSet, RngState, Tensor, Var};

fn main() -> jepa_nn::Result<()> {
    // d/dx of x³ at x = 2 is 12; differentiating that gradient again gives 6x = 12.
    let x = Var::leaf(Tensor::new(&[1], vec![2.0])?);
    let y = x.mul(&x)?.mul(&x)?.sum();
    let dy = grad(&y, std::slice::from_ref(&x), true)?.remove(0);
    let d2y = grad(&dy.sum(), std::slice::from_ref(&x), false)?.remove(0);
    println!("x³ at 2: first derivative {}, second derivative {}", dy.value().item(), d2y.value().item());

    // Fit y = 3 x₀ − 2 x₁ + 0.5 with a 2 → 1 linear layer.
    let layer = Linear::new("fc", 2, 1);
    let mut ps = ParameterSet::new();
    layer.init(&mut ps, &mut RngState::new(0));
    let inputs = Tensor::from_fn(&[32, 2], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
    let targets = Tensor::from_fn(&[32, 1], |n| 3.0 * inputs.data()[2 * n] - 2.0 * inputs.data()[2 * n + 1] + 0.5);
    let adam = Adam::with_lr(0.05)?;
    for step in 0..=400 {
        let vars = ps.bind(true);
        let out = layer.forward(&Ctx::eval(&vars, ps.buffers()), &Var::constant(inputs.clone()))?;
        let loss = out.sub(&Var::constant(targets.clone()))?.square().mean();
        let g = gradients(&loss, &[&vars])?;
        ps.set_grads(&g[0])?;
        adam.update(&mut ps);
        if step % 100 == 0 {
            println!("step {step:>3}: mean squared error {:.6}", loss.value().item());
        }
    }
    println!("weights {:?}, bias {:?} (want [3, -2], [0.5])", ps.get("fc.weight")?.value.data(), ps.get("fc.bias")?.value.data());
    Ok(())
}
