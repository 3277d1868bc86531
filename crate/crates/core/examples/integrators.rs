//! RK4 against forward Euler: one step of x' = -x, global convergence order,
//! and energy drift of the undriven pendulum.
//!
//! ```text
//! cargo run --example integrators
//! ```

use jepa_nn::{Tensor, Var};
use ode_jepa::pendulum::{pendulum_step, PendulumParams, PendulumState};
use ode_jepa::predictor::integrate_step;
use ode_jepa::Integrator;

fn solve_decay(dt: f64, integrator: Integrator) -> ode_jepa::Result<f64> {
    let steps = (1.0 / dt).round() as usize;
    let mut x = Var::constant(Tensor::ones(&[1, 1]));
    for _ in 0..steps {
        x = integrate_step(|v| Ok(v.neg()), &x, dt, integrator)?;
    }
    Ok(x.value().data()[0])
}

fn main() -> ode_jepa::Result<()> {
    let exact = (-1.0f64).exp();
    for integrator in [Integrator::Rk4, Integrator::Euler] {
        let one = integrate_step(|v| Ok(v.neg()), &Var::constant(Tensor::ones(&[1, 1])), 0.1, integrator)?;
        let e1 = (solve_decay(0.1, integrator)? - exact).abs();
        let e2 = (solve_decay(0.05, integrator)? - exact).abs();
        println!(
            "{integrator:?}: one step {:.8}, error at t=1 {e1:.3e} -> {e2:.3e} when dt halves (ratio {:.2})",
            one.value().data()[0],
            e1 / e2
        );
    }

    let p = PendulumParams::default();
    let mut x = PendulumState { theta: 1.0, theta_dot: 0.0 };
    let e0 = p.energy(x);
    for _ in 0..100 {
        x = pendulum_step(x, 0.0, 0.1, &p)?;
    }
    println!("undriven pendulum, 100 RK4 steps at dt=0.1: relative energy drift {:.3e}", (p.energy(x) - e0).abs() / e0.abs());
    Ok(())
}
