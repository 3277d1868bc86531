//! Latent-to-image decoder.

use jepa_nn::layers::{BatchNorm, ConvTranspose2d, Dropout, Linear};
use jepa_nn::{Ctx, NnError, ParameterSet, RngState, Var};

use crate::config::ModelConfig;
use crate::error::Result;

/// Linear layer to the encoder's last feature map, then transposed-conv
/// blocks that mirror the encoder's channel widths back to one channel, then
/// a sigmoid. Input `[B, D]`, output `[B, H, W]` in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct Decoder {
    fc: Linear,
    deconvs: Vec<ConvTranspose2d>,
    norms: Vec<BatchNorm>,
    dropout: Dropout,
    top_channels: usize,
    feature_size: usize,
    image_size: usize,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let chans = &cfg.encoder_channels;
        let top = *chans.last().expect("validated non-empty");
        let fs = cfg.feature_size();
        let mut deconvs = Vec::new();
        let mut norms = Vec::new();
        for i in (0..chans.len()).rev() {
            let c_out = if i == 0 { 1 } else { chans[i - 1] };
            let j = deconvs.len();
            deconvs.push(ConvTranspose2d {
                name: format!("deconv{j}"),
                c_in: chans[i],
                c_out,
                kernel: 3,
                stride: 2,
                padding: 1,
                output_padding: 1,
            });
            if i > 0 {
                norms.push(BatchNorm::new(format!("bn{j}"), c_out));
            }
        }
        Ok(Self {
            fc: Linear::new("fc", cfg.latent_dim, top * fs * fs),
            deconvs,
            norms,
            dropout: Dropout::new(cfg.dropout)?,
            top_channels: top,
            feature_size: fs,
            image_size: cfg.image_size,
        })
    }

    pub fn init(&self, rng: &mut RngState) -> ParameterSet {
        let mut ps = ParameterSet::new();
        self.fc.init(&mut ps, rng);
        for d in &self.deconvs {
            d.init(&mut ps, rng);
        }
        for bn in &self.norms {
            bn.init(&mut ps);
        }
        ps
    }

    /// Sets the last layer's bias so an all-zero feature map decodes to
    /// `level` everywhere, e.g. the mean training pixel intensity.
    pub fn set_output_level(&self, ps: &mut ParameterSet, level: f64) -> Result<()> {
        let last = self.deconvs.last().expect("at least one block");
        let p = level.clamp(1e-3, 1.0 - 1e-3);
        let bias = ps.get_mut(&format!("{}.bias", last.name))?;
        bias.value.data_mut().fill((p / (1.0 - p)).ln());
        Ok(())
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, s: &Var) -> Result<Var> {
        if s.shape().len() != 2 || s.shape()[1] != self.fc.in_dim {
            return Err(NnError::Dimension(format!("decoder expects [B, {}], got {:?}", self.fc.in_dim, s.shape())).into());
        }
        let batch = s.shape()[0];
        let fs = self.feature_size;
        let mut h = self.fc.forward(ctx, s)?.reshape(&[batch, self.top_channels, fs, fs])?;
        for (j, deconv) in self.deconvs.iter().enumerate() {
            h = deconv.forward(ctx, &h)?;
            if let Some(bn) = self.norms.get(j) {
                h = bn.forward(ctx, &h.elu())?;
                h = self.dropout.forward(ctx, &h)?;
            }
        }
        Ok(h.sigmoid().reshape(&[batch, self.image_size, self.image_size])?)
    }
}
