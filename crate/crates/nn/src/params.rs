//! Named parameter tensors with gradient buffers and optimizer moments.

use std::collections::BTreeMap;

use crate::error::{dim_err, NnError, Result};
use crate::tensor::Tensor;
use crate::var::{grad, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub(crate) first_moment: Tensor,
    pub(crate) second_moment: Tensor,
}

impl Parameter {
    fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self { grad: zeros.clone(), first_moment: zeros.clone(), second_moment: zeros, value }
    }
}

/// Parameters plus non-trainable buffers (batch-norm running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Parameter>,
    buffers: BTreeMap<String, Tensor>,
    pub(crate) step: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Parameter::new(value));
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params.get(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params.get_mut(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers.get(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.buffers
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Number of optimizer steps taken.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Graph variables for every parameter: differentiable leaves when
    /// `trainable`, constants otherwise.
    pub fn bind(&self, trainable: bool) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| {
                let v = if trainable { Var::leaf(p.value.clone()) } else { Var::constant(p.value.clone()) };
                (k.clone(), v)
            })
            .collect();
        Bindings { vars }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Overwrites gradient buffers from a name → gradient map.
    pub fn set_grads(&mut self, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = self.get_mut(name)?;
            if p.grad.shape() != g.shape() {
                return dim_err(format!("gradient for `{name}` has shape {:?}, expected {:?}", g.shape(), p.grad.shape()));
            }
            p.grad = g.clone();
        }
        Ok(())
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.params.values().map(|p| p.grad.sq_norm()).sum()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Stable FNV-1a fingerprint over names, values and buffers.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        let tensors = self.params.iter().map(|(k, p)| (k, &p.value)).chain(self.buffers.iter());
        for (name, t) in tensors {
            feed(name.as_bytes());
            for v in t.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Graph variables bound to a [`ParameterSet`] for one forward pass.
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars.get(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Reverse-mode gradients of `loss` with respect to every variable in each
/// bindings set, one name → gradient map per set.
pub fn gradients(loss: &Var, sets: &[&Bindings]) -> Result<Vec<BTreeMap<String, Tensor>>> {
    let vars: Vec<Var> = sets.iter().flat_map(|b| b.vars.values().cloned()).collect();
    let mut grads = grad(loss, &vars, false)?.into_iter();
    Ok(sets
        .iter()
        .map(|b| {
            b.vars
                .keys()
                .map(|k| (k.clone(), grads.next().expect("one gradient per variable").value().clone()))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_and_collect_gradients() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        ps.insert("unused", Tensor::zeros(&[3]));
        let b = ps.bind(true);
        let loss = b.get("w").unwrap().square().sum();
        let g = gradients(&loss, &[&b]).unwrap().remove(0);
        assert_eq!(g["w"].data(), &[2.0, 4.0]);
        assert_eq!(g["unused"].data(), &[0.0; 3]);
        ps.set_grads(&g).unwrap();
        assert_eq!(ps.get("w").unwrap().grad.data(), &[2.0, 4.0]);
    }

    #[test]
    fn frozen_bindings_are_constants() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::ones(&[2]));
        assert!(!ps.bind(false).get("w").unwrap().requires_grad());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::ones(&[2]));
        let a = ps.fingerprint();
        ps.get_mut("w").unwrap().value.data_mut()[0] = 1.0 + 1e-15;
        assert_ne!(a, ps.fingerprint());
    }
}
