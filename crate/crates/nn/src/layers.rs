//! Parameterized layers that register their tensors in a [`ParameterSet`]
//! under a name prefix and read them back from [`Bindings`] at forward time.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{NnError, Result};
use crate::functional::{self, Mode, RunningStats};
use crate::params::{Bindings, ParameterSet};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::var::Var;

enum Buffers<'a> {
    Shared(&'a BTreeMap<String, Tensor>),
    Owned(&'a mut BTreeMap<String, Tensor>),
}

/// Everything a forward pass needs besides its input.
pub struct Ctx<'a> {
    vars: &'a Bindings,
    buffers: Buffers<'a>,
    mode: Mode,
    rng: Option<&'a mut RngState>,
    calibration: Option<f64>,
}

impl<'a> Ctx<'a> {
    /// Training pass: dropout active, batch statistics, running stats updated.
    pub fn train(vars: &'a Bindings, buffers: &'a mut BTreeMap<String, Tensor>, rng: &'a mut RngState) -> Self {
        Self { vars, buffers: Buffers::Owned(buffers), mode: Mode::Train, rng: Some(rng), calibration: None }
    }

    /// Statistics-gathering pass: batch norm normalizes with batch statistics
    /// and folds them into the running stats with weight `momentum`, while
    /// dropout stays off so the stats match what eval mode will see.
    pub fn calibrate(vars: &'a Bindings, buffers: &'a mut BTreeMap<String, Tensor>, momentum: f64) -> Self {
        Self { vars, buffers: Buffers::Owned(buffers), mode: Mode::Train, rng: None, calibration: Some(momentum) }
    }

    /// Inference pass on shared, read-only state.
    pub fn eval(vars: &'a Bindings, buffers: &'a BTreeMap<String, Tensor>) -> Self {
        Self { vars, buffers: Buffers::Shared(buffers), mode: Mode::Eval, rng: None, calibration: None }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Result<&Var> {
        self.vars.get(name)
    }

    fn buffer(&self, name: &str) -> Result<&Tensor> {
        let map = match &self.buffers {
            Buffers::Shared(m) => *m,
            Buffers::Owned(m) => &**m,
        };
        map.get(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    fn rng(&mut self) -> Result<&mut RngState> {
        self.rng
            .as_deref_mut()
            .ok_or_else(|| NnError::Contract("training-mode forward without an rng".into()))
    }
}

/// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut stream = rng.next_stream();
    Tensor::from_fn(shape, |_| stream.random_range(-bound..bound))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self { name: name.into(), in_dim, out_dim }
    }

    pub fn init(&self, ps: &mut ParameterSet, rng: &mut RngState) {
        ps.insert(self.w(), kaiming_uniform(&[self.out_dim, self.in_dim], self.in_dim, rng));
        ps.insert(self.b(), Tensor::zeros(&[self.out_dim]));
    }

    /// Zero weights and bias, so the layer outputs zeros until trained.
    pub fn init_zero(&self, ps: &mut ParameterSet) {
        ps.insert(self.w(), Tensor::zeros(&[self.out_dim, self.in_dim]));
        ps.insert(self.b(), Tensor::zeros(&[self.out_dim]));
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Var) -> Result<Var> {
        functional::affine_map(x, ctx.param(&self.w())?, ctx.param(&self.b())?)
    }

    fn w(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn b(&self) -> String {
        format!("{}.bias", self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn init(&self, ps: &mut ParameterSet, rng: &mut RngState) {
        let fan_in = self.c_in * self.kernel * self.kernel;
        ps.insert(
            format!("{}.weight", self.name),
            kaiming_uniform(&[self.c_out, self.c_in, self.kernel, self.kernel], fan_in, rng),
        );
        ps.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.c_out]));
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Var) -> Result<Var> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        functional::add_channel_bias(&functional::conv2d(x, w, self.stride, self.padding)?, b)
    }
}

/// Transposed convolution; weights are stored as `[c_in, c_out, k, k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvTranspose2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    pub fn init(&self, ps: &mut ParameterSet, rng: &mut RngState) {
        let fan_in = self.c_in * self.kernel * self.kernel;
        ps.insert(
            format!("{}.weight", self.name),
            kaiming_uniform(&[self.c_in, self.c_out, self.kernel, self.kernel], fan_in, rng),
        );
        ps.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.c_out]));
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Var) -> Result<Var> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        let y = functional::conv_transpose2d(x, w, self.stride, self.padding, self.output_padding)?;
        functional::add_channel_bias(&y, b)
    }
}

/// Batch normalization with a learned per-channel affine part.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels, momentum: 0.1, eps: 1e-5 }
    }

    pub fn init(&self, ps: &mut ParameterSet) {
        ps.insert(format!("{}.gamma", self.name), Tensor::ones(&[self.channels]));
        ps.insert(format!("{}.beta", self.name), Tensor::zeros(&[self.channels]));
        let stats = RunningStats::new(self.channels);
        ps.insert_buffer(format!("{}.running_mean", self.name), stats.mean);
        ps.insert_buffer(format!("{}.running_var", self.name), stats.var);
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let (mean_key, var_key) = (format!("{}.running_mean", self.name), format!("{}.running_var", self.name));
        let running = RunningStats { mean: ctx.buffer(&mean_key)?.clone(), var: ctx.buffer(&var_key)?.clone() };
        let mut updated = running.clone();
        let track = matches!(ctx.buffers, Buffers::Owned(_));
        let normed = functional::batch_norm(
            x,
            ctx.mode,
            if track { Some(&mut updated) } else { None },
            &running,
            ctx.calibration.unwrap_or(self.momentum),
            self.eps,
        )?;
        if let (Buffers::Owned(map), Mode::Train) = (&mut ctx.buffers, ctx.mode) {
            map.insert(mean_key, updated.mean);
            map.insert(var_key, updated.var);
        }
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        normed.mul_mid(gamma)?.add_mid(beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        functional::check_dropout_rate(rate)?;
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        if ctx.mode == Mode::Eval || ctx.calibration.is_some() || self.rate == 0.0 {
            return Ok(x.clone());
        }
        let rate = self.rate;
        functional::dropout(x, rate, Mode::Train, ctx.rng()?)
    }
}
