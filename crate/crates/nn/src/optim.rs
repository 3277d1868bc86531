//! Adam with bias correction and global gradient-norm clipping.

use crate::error::{NnError, Result};
use crate::params::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(NnError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(NnError::Config(format!("invalid Adam constants β1={beta1} β2={beta2} eps={eps}")));
        }
        Ok(Self { lr, beta1, beta2, eps })
    }

    pub fn with_lr(lr: f64) -> Result<Self> {
        let d = Self::default();
        Self::new(lr, d.beta1, d.beta2, d.eps)
    }

    /// Applies one update using the gradients stored in `params`.
    pub fn update(&self, params: &mut ParameterSet) {
        params.step += 1;
        let t = params.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (_, p) in params.iter_mut() {
            let g = p.grad.data();
            let m = p.first_moment.data_mut();
            for (m, &g) in m.iter_mut().zip(g) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            }
            let v = p.second_moment.data_mut();
            for (v, &g) in v.iter_mut().zip(p.grad.data()) {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            }
            let (m, v) = (p.first_moment.data(), p.second_moment.data());
            for ((w, &m), &v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                *w -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales the gradients of all sets so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(sets: &mut [&mut ParameterSet], max_norm: f64) -> f64 {
    let norm = sets.iter().map(|s| s.grad_sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for s in sets.iter_mut() {
            s.scale_grads(f);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(v: f64, g: f64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::new(&[1], vec![v]).unwrap());
        ps.get_mut("w").unwrap().grad = Tensor::new(&[1], vec![g]).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = one_param(0.5, 0.0);
        Adam::default().update(&mut ps);
        assert_eq!(ps.get("w").unwrap().value.data(), &[0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + eps)
        for g in [0.3, -2.0, 40.0] {
            let mut ps = one_param(1.0, g);
            Adam::default().update(&mut ps);
            let want = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((ps.get("w").unwrap().value.data()[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_steps_are_reproducible() {
        let run = || {
            let mut ps = one_param(1.0, 0.7);
            let opt = Adam::default();
            opt.update(&mut ps);
            opt.update(&mut ps);
            ps.get("w").unwrap().value.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn nonpositive_lr_is_rejected() {
        assert!(Adam::with_lr(0.0).is_err());
        assert!(Adam::with_lr(-1e-3).is_err());
        assert!(Adam::with_lr(f64::NAN).is_err());
    }

    #[test]
    fn clipping_bounds_joint_norm() {
        let mut a = one_param(0.0, 30.0);
        let mut b = one_param(0.0, 40.0);
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 10.0);
        assert!((norm - 50.0).abs() < 1e-12);
        let after = (a.grad_sq_norm() + b.grad_sq_norm()).sqrt();
        assert!((after - 10.0).abs() < 1e-12);
    }
}
