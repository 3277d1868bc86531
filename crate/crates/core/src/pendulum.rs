//! Ground-truth data source: a torque-actuated pendulum under PID control,
//! rendered to 64×64 grayscale frames.

use std::f64::consts::PI;

use jepa_nn::RngState;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EpisodeDataset;
use crate::error::{JepaError, Result};

pub const FRAME_SIZE: usize = 64;
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;
const ROD_LENGTH: f64 = 24.0;
const ROD_HALF_WIDTH: f64 = 1.0;
const DIVERGENCE_LIMIT: f64 = 1e3;

/// Angle stored unwrapped; wrapped only for rendering and the PID error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub g: f64,
    pub length: f64,
    pub mass: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { g: 9.81, length: 2.0, mass: 2.0 }
    }
}

impl PendulumParams {
    /// `E = ½·m·L²·θ̇² − m·g·L·cos θ`
    pub fn energy(&self, x: PendulumState) -> f64 {
        let inertia = self.mass * self.length * self.length;
        0.5 * inertia * x.theta_dot * x.theta_dot - self.mass * self.g * self.length * x.theta.cos()
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// `(θ̇, −(g/L)·sin θ + τ/(m·L²))`
pub fn pendulum_dynamics(x: PendulumState, tau: f64, p: &PendulumParams) -> Result<(f64, f64)> {
    if !(x.theta.is_finite() && x.theta_dot.is_finite() && tau.is_finite()) {
        return Err(JepaError::Numeric(format!("non-finite pendulum input {x:?}, tau={tau}")));
    }
    let accel = -(p.g / p.length) * x.theta.sin() + tau / (p.mass * p.length * p.length);
    Ok((x.theta_dot, accel))
}

/// One classical Runge–Kutta step (stages at 0, dt/2, dt/2, dt).
pub fn rk4_step<const N: usize>(
    f: impl Fn(&[f64; N]) -> Result<[f64; N]>,
    x: [f64; N],
    dt: f64,
) -> Result<[f64; N]> {
    if !(dt > 0.0) {
        return Err(JepaError::Config(format!("integration step must be positive, got {dt}")));
    }
    let offset = |base: &[f64; N], k: &[f64; N], h: f64| std::array::from_fn(|i| base[i] + h * k[i]);
    let k1 = f(&x)?;
    let k2 = f(&offset(&x, &k1, dt / 2.0))?;
    let k3 = f(&offset(&x, &k2, dt / 2.0))?;
    let k4 = f(&offset(&x, &k3, dt))?;
    Ok(std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}

/// Pendulum step with the torque held constant over `dt`.
pub fn pendulum_step(x: PendulumState, tau: f64, dt: f64, p: &PendulumParams) -> Result<PendulumState> {
    let f = |s: &[f64; 2]| {
        let (a, b) = pendulum_dynamics(PendulumState { theta: s[0], theta_dot: s[1] }, tau, p)?;
        Ok([a, b])
    };
    let [theta, theta_dot] = rk4_step(f, [x.theta, x.theta_dot], dt)?;
    Ok(PendulumState { theta, theta_dot })
}

/// PID controller acting on the wrapped tracking error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral: f64,
    pub prev_error: f64,
}

impl Default for PidState {
    fn default() -> Self {
        Self::with_gains(500.0, 0.2, 200.0)
    }
}

impl PidState {
    pub fn with_gains(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd, integral: 0.0, prev_error: 0.0 }
    }
}

/// Returns the torque and the advanced controller state.
pub fn pid_control(pid: PidState, theta: f64, theta_ref: f64, dt: f64) -> (f64, PidState) {
    let e = wrap_angle(theta_ref - theta);
    let integral = pid.integral + e * dt;
    let derivative = (e - pid.prev_error) / dt;
    let tau = pid.kp * e + pid.ki * integral + pid.kd * derivative;
    (tau, PidState { integral, prev_error: e, ..pid })
}

/// A reference angle drawn uniformly from `[-π, π]`.
pub fn sample_reference(rng: &mut RngState) -> f64 {
    rng.next_stream().random_range(-PI..=PI)
}

/// Renders the rod as an 8-bit grayscale frame.
///
/// The rod is 24 px long and 3 px wide, anchored at the image center
/// (32, 32). θ = 0 points straight down and positive θ turns it toward the
/// right (counter-clockwise on screen, y axis pointing down). Edges are
/// anti-aliased with a one-pixel linear ramp.
pub fn render_u8(theta: f64) -> Vec<u8> {
    let a = wrap_angle(theta);
    let (dir_row, dir_col) = (a.cos(), a.sin());
    let center = FRAME_SIZE as f64 / 2.0;
    let mut frame = vec![0u8; FRAME_PIXELS];
    for r in 0..FRAME_SIZE {
        for c in 0..FRAME_SIZE {
            let (dr, dc) = (r as f64 + 0.5 - center, c as f64 + 0.5 - center);
            let along = dr * dir_row + dc * dir_col;
            let across = (dc * dir_row - dr * dir_col).abs();
            let cover_len = (along.min(ROD_LENGTH - along) + 0.5).clamp(0.0, 1.0);
            let cover_wid = (ROD_HALF_WIDTH + 0.5 - across).clamp(0.0, 1.0);
            frame[r * FRAME_SIZE + c] = (255.0 * cover_len * cover_wid).round() as u8;
        }
    }
    frame
}

/// Rendered frame with pixel values in `[0, 1]`.
pub fn render(theta: f64) -> Vec<f64> {
    render_u8(theta).into_iter().map(|v| f64::from(v) / 255.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub steps: usize,
    /// Frame sampling interval.
    pub dt: f64,
    pub seed: u64,
    /// Steps between reference resamples.
    pub hold_steps: usize,
    /// Controller/integrator updates per frame interval.
    pub control_substeps: usize,
    pub params: PendulumParams,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            dt: 0.1,
            seed: 0,
            hold_steps: 50,
            control_substeps: 10,
            params: PendulumParams::default(),
            kp: 500.0,
            ki: 0.2,
            kd: 200.0,
        }
    }
}

/// Minimum episode length that yields one training window for horizons 4/4.
pub const MIN_STEPS: usize = 9;

/// Closed-loop rollout from rest, recording `(o_k, a_k, x_k, ref_k)`.
///
/// `a_k` is the torque applied over `[t_k, t_k + dt)`: the mean of the
/// controller outputs over the control sub-steps of that interval.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<EpisodeDataset> {
    if cfg.steps < MIN_STEPS {
        return Err(JepaError::DatasetTooShort { len: cfg.steps, need: MIN_STEPS });
    }
    if !(cfg.dt > 0.0) || cfg.control_substeps == 0 || cfg.hold_steps == 0 {
        return Err(JepaError::Config(format!(
            "invalid generator timing: dt={}, control_substeps={}, hold_steps={}",
            cfg.dt, cfg.control_substeps, cfg.hold_steps
        )));
    }
    let mut rng = RngState::new(cfg.seed);
    let h = cfg.dt / cfg.control_substeps as f64;
    let mut x = PendulumState::default();
    let mut pid = PidState::with_gains(cfg.kp, cfg.ki, cfg.kd);
    let mut theta_ref = 0.0;

    let mut states = Vec::with_capacity(cfg.steps);
    let mut actions = Vec::with_capacity(cfg.steps);
    let mut references = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        if k % cfg.hold_steps == 0 {
            theta_ref = sample_reference(&mut rng);
        }
        states.push(x);
        references.push(theta_ref);
        let mut torque_sum = 0.0;
        for _ in 0..cfg.control_substeps {
            let (tau, next_pid) = pid_control(pid, x.theta, theta_ref, h);
            pid = next_pid;
            torque_sum += tau;
            x = pendulum_step(x, tau, h, &cfg.params)?;
        }
        if !x.theta_dot.is_finite() || x.theta_dot.abs() > DIVERGENCE_LIMIT {
            return Err(JepaError::SimulationDiverged { step: k, theta_dot: x.theta_dot });
        }
        actions.push(torque_sum / cfg.control_substeps as f64);
    }

    let mut observations = Vec::with_capacity(cfg.steps * FRAME_PIXELS);
    for s in &states {
        observations.extend(render_u8(s.theta));
    }
    Ok(EpisodeDataset::from_rollout(cfg, observations, &actions, &states, &references))
}
