//! Latent vector field `f(s, z)` and its explicit integration.

use jepa_nn::layers::Linear;
use jepa_nn::{Ctx, ParameterSet, RngState, Var};

use crate::config::{Integrator, ModelConfig};
use crate::error::{JepaError, Result};

/// One RK4 (or Euler) step of `ds/dt = f(s)` on graph variables.
pub fn integrate_step(f: impl Fn(&Var) -> Result<Var>, s: &Var, dt: f64, integrator: Integrator) -> Result<Var> {
    if !(dt > 0.0) {
        return Err(JepaError::Config(format!("step size must be positive, got {dt}")));
    }
    let next = match integrator {
        Integrator::Euler => s.add(&f(s)?.scale(dt))?,
        Integrator::Rk4 => {
            let k1 = f(s)?;
            let k2 = f(&s.add(&k1.scale(dt / 2.0))?)?;
            let k3 = f(&s.add(&k2.scale(dt / 2.0))?)?;
            let k4 = f(&s.add(&k3.scale(dt))?)?;
            let slope = k1.add(&k2.scale(2.0))?.add(&k3.scale(2.0))?.add(&k4)?;
            s.add(&slope.scale(dt / 6.0))?
        }
    };
    if !next.value().is_finite() {
        return Err(JepaError::Numeric("non-finite latent state after integration step".into()));
    }
    Ok(next)
}

/// MLP `[s, z] -> ds/dt` with ELU hidden layers. The output layer starts at
/// zero, so an untrained predictor is the identity flow.
#[derive(Clone, Debug)]
pub struct LatentDynamics {
    layers: [Linear; 3],
    integrator: Integrator,
}

impl LatentDynamics {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, h) = (cfg.latent_dim, cfg.predictor_hidden);
        Ok(Self {
            layers: [Linear::new("fc0", 2 * d, h), Linear::new("fc1", h, h), Linear::new("fc2", h, d)],
            integrator: cfg.integrator,
        })
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    pub fn init(&self, rng: &mut RngState) -> ParameterSet {
        let mut ps = ParameterSet::new();
        self.layers[0].init(&mut ps, rng);
        self.layers[1].init(&mut ps, rng);
        self.layers[2].init_zero(&mut ps);
        ps
    }

    /// `f(s, z)` for `[B, D]` inputs.
    pub fn vector_field(&self, ctx: &Ctx<'_>, s: &Var, z: &Var) -> Result<Var> {
        let x = Var::concat_cols(&[s.clone(), z.clone()])?;
        let h = self.layers[0].forward(ctx, &x)?.elu();
        let h = self.layers[1].forward(ctx, &h)?.elu();
        Ok(self.layers[2].forward(ctx, &h)?)
    }

    /// `s_{k+1}` from `s_k` with `z_k` held over the step.
    pub fn predict_step(&self, ctx: &Ctx<'_>, s: &Var, z: &Var, dt: f64) -> Result<Var> {
        integrate_step(|x| self.vector_field(ctx, x, z), s, dt, self.integrator)
    }

    /// Autoregressive rollout: one predicted state per latent action.
    pub fn rollout(&self, ctx: &Ctx<'_>, s0: &Var, actions: &[Var], dt: f64) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(actions.len());
        let mut s = s0.clone();
        for z in actions {
            s = self.predict_step(ctx, &s, z, dt)?;
            out.push(s.clone());
        }
        Ok(out)
    }
}
