//! Observation and action encoders.

use jepa_nn::layers::{BatchNorm, Conv2d, Dropout, Linear};
use jepa_nn::{Ctx, NnError, ParameterSet, RngState, Var};

use crate::config::ModelConfig;
use crate::error::Result;

/// Conv encoder over `T_p` stacked frames: blocks of (conv, ELU, batch norm,
/// dropout), then a linear head and a sigmoid. Input `[B, T_p, H, W]`,
/// output `[B, D]` with every coordinate in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct ObservationEncoder {
    convs: Vec<Conv2d>,
    norms: Vec<BatchNorm>,
    dropout: Dropout,
    head: Linear,
    past_frames: usize,
    image_size: usize,
}

impl ObservationEncoder {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut c_in = cfg.past_frames;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (i, &c_out) in cfg.encoder_channels.iter().enumerate() {
            convs.push(Conv2d { name: format!("conv{i}"), c_in, c_out, kernel: 3, stride: 2, padding: 1 });
            norms.push(BatchNorm::new(format!("bn{i}"), c_out));
            c_in = c_out;
        }
        let fs = cfg.feature_size();
        Ok(Self {
            convs,
            norms,
            dropout: Dropout::new(cfg.dropout)?,
            head: Linear::new("head", c_in * fs * fs, cfg.latent_dim),
            past_frames: cfg.past_frames,
            image_size: cfg.image_size,
        })
    }

    pub fn init(&self, rng: &mut RngState) -> ParameterSet {
        let mut ps = ParameterSet::new();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            conv.init(&mut ps, rng);
            bn.init(&mut ps);
        }
        self.head.init(&mut ps, rng);
        ps
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let expected = [self.past_frames, self.image_size, self.image_size];
        if x.shape().len() != 4 || x.shape()[1..] != expected {
            return Err(NnError::Dimension(format!(
                "observation encoder expects [B, {}, {}, {}], got {:?}",
                expected[0],
                expected[1],
                expected[2],
                x.shape()
            ))
            .into());
        }
        let batch = x.shape()[0];
        let mut h = x.clone();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            h = conv.forward(ctx, &h)?.elu();
            h = bn.forward(ctx, &h)?;
            h = self.dropout.forward(ctx, &h)?;
        }
        let flat = h.reshape(&[batch, self.head.in_dim])?;
        Ok(self.head.forward(ctx, &flat)?.sigmoid())
    }
}

/// Per-step MLP from a scalar standardized action to a latent action:
/// blocks of (linear, dropout, ELU), then a linear head. Input `[B, 1]`,
/// output `[B, D]`.
#[derive(Clone, Debug)]
pub struct ActionEncoder {
    blocks: Vec<Linear>,
    dropout: Dropout,
    head: Linear,
}

impl ActionEncoder {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.action_blocks)
            .map(|i| Linear::new(format!("block{i}"), if i == 0 { 1 } else { cfg.action_hidden }, cfg.action_hidden))
            .collect();
        Ok(Self {
            blocks,
            dropout: Dropout::new(cfg.dropout)?,
            head: Linear::new("head", cfg.action_hidden, cfg.latent_dim),
        })
    }

    pub fn init(&self, rng: &mut RngState) -> ParameterSet {
        let mut ps = ParameterSet::new();
        for b in &self.blocks {
            b.init(&mut ps, rng);
        }
        self.head.init(&mut ps, rng);
        ps
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, a: &Var) -> Result<Var> {
        if a.shape().len() != 2 || a.shape()[1] != 1 {
            return Err(NnError::Dimension(format!("action encoder expects [B, 1], got {:?}", a.shape())).into());
        }
        let mut h = a.clone();
        for b in &self.blocks {
            h = b.forward(ctx, &h)?;
            h = self.dropout.forward(ctx, &h)?.elu();
        }
        Ok(self.head.forward(ctx, &h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use jepa_nn::Tensor;

    fn small() -> ModelConfig {
        ModelConfig { image_size: 16, encoder_channels: vec![2, 3], ..ModelConfig::default() }
    }

    #[test]
    fn latents_are_in_the_unit_box() {
        let cfg = small();
        let enc = ObservationEncoder::new(&cfg).unwrap();
        let ps = enc.init(&mut RngState::new(1));
        let vars = ps.bind(false);
        let x = Var::constant(Tensor::from_fn(&[5, 4, 16, 16], |i| ((i * 37) % 11) as f64 / 10.0));
        let s = enc.forward(&mut Ctx::eval(&vars, ps.buffers()), &x).unwrap();
        assert_eq!(s.shape(), &[5, 6]);
        assert!(s.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        let again = enc.forward(&mut Ctx::eval(&vars, ps.buffers()), &x).unwrap();
        assert_eq!(s.value(), again.value());
    }

    #[test]
    fn wrong_frame_count_is_a_shape_error() {
        let cfg = small();
        let enc = ObservationEncoder::new(&cfg).unwrap();
        let ps = enc.init(&mut RngState::new(1));
        let vars = ps.bind(false);
        let x = Var::constant(Tensor::zeros(&[2, 3, 16, 16]));
        assert!(enc.forward(&mut Ctx::eval(&vars, ps.buffers()), &x).is_err());
    }

    #[test]
    fn actions_map_per_step() {
        let cfg = ModelConfig::default();
        let enc = ActionEncoder::new(&cfg).unwrap();
        let ps = enc.init(&mut RngState::new(2));
        let vars = ps.bind(false);
        let run = |a: Vec<f64>| {
            let x = Var::constant(Tensor::new(&[3, 1], a).unwrap());
            enc.forward(&mut Ctx::eval(&vars, ps.buffers()), &x).unwrap().value().clone()
        };
        let z = run(vec![0.5, -1.0, 2.0]);
        assert_eq!(z.shape(), &[3, 6]);
        let permuted = run(vec![2.0, 0.5, -1.0]);
        assert_eq!(&permuted.data()[..6], &z.data()[12..]);
        assert_eq!(&permuted.data()[6..12], &z.data()[..6]);
    }
}
