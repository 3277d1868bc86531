//! The trained model bundle and its checkpoint container.
//!
//! File layout: 8-byte magic, `u32` format version, `u64` header length, a
//! JSON header (architecture, metadata, tensor table), then every tensor's
//! values as consecutive `f64` little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use jepa_nn::{ParameterSet, RngState, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::decoder::Decoder;
use crate::encoders::{ActionEncoder, ObservationEncoder};
use crate::error::{JepaError, Result};
use crate::predictor::LatentDynamics;

const MAGIC: &[u8; 8] = b"ODEJEPA\0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Network definitions for one [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct Architecture {
    pub encoder: ObservationEncoder,
    pub action_encoder: ActionEncoder,
    pub dynamics: LatentDynamics,
    pub decoder: Decoder,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            encoder: ObservationEncoder::new(cfg)?,
            action_encoder: ActionEncoder::new(cfg)?,
            dynamics: LatentDynamics::new(cfg)?,
            decoder: Decoder::new(cfg)?,
        })
    }
}

/// Values a bundle needs to interpret raw data the way it was trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub dt: f64,
    pub action_mean: f64,
    pub action_std: f64,
    pub seed: u64,
    pub decoder_trained: bool,
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub meta: BundleMeta,
    pub encoder: ParameterSet,
    pub action_encoder: ParameterSet,
    pub predictor: ParameterSet,
    pub decoder: ParameterSet,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    buffer: bool,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: BundleMeta,
    tensors: Vec<TensorEntry>,
}

const GROUPS: [&str; 4] = ["encoder", "action_encoder", "predictor", "decoder"];

impl ModelBundle {
    /// Freshly initialized networks; each group draws from its own stream.
    pub fn init(config: &ModelConfig, meta: BundleMeta, rng: &mut RngState) -> Result<Self> {
        let arch = Architecture::new(config)?;
        Ok(Self {
            config: config.clone(),
            meta,
            encoder: arch.encoder.init(&mut rng.fork(1)),
            action_encoder: arch.action_encoder.init(&mut rng.fork(2)),
            predictor: arch.dynamics.init(&mut rng.fork(3)),
            decoder: arch.decoder.init(&mut rng.fork(4)),
        })
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(&self.config)
    }

    fn group(&self, name: &str) -> &ParameterSet {
        match name {
            "encoder" => &self.encoder,
            "action_encoder" => &self.action_encoder,
            "predictor" => &self.predictor,
            _ => &self.decoder,
        }
    }

    fn group_mut(&mut self, name: &str) -> &mut ParameterSet {
        match name {
            "encoder" => &mut self.encoder,
            "action_encoder" => &mut self.action_encoder,
            "predictor" => &mut self.predictor,
            _ => &mut self.decoder,
        }
    }

    /// Fingerprint of the encoders and predictor (everything phase 2 freezes).
    pub fn frozen_fingerprint(&self) -> [u64; 3] {
        [self.encoder.fingerprint(), self.action_encoder.fingerprint(), self.predictor.fingerprint()]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut data: Vec<&Tensor> = Vec::new();
        for g in GROUPS {
            let ps = self.group(g);
            for (name, p) in ps.iter() {
                tensors.push(TensorEntry { group: g.into(), name: name.clone(), buffer: false, shape: p.value.shape().to_vec() });
                data.push(&p.value);
            }
            for (name, t) in ps.buffers() {
                tensors.push(TensorEntry { group: g.into(), name: name.clone(), buffer: true, shape: t.shape().to_vec() });
                data.push(t);
            }
        }
        let header = serde_json::to_vec(&Header { config: self.config.clone(), meta: self.meta.clone(), tensors })?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * data.iter().map(|t| t.numel()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in data {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| JepaError::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        let header: Header = serde_json::from_slice(body.get(..hlen).ok_or_else(|| bad("truncated header"))?)?;
        let mut values = body[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if body.len() - hlen != 8 * expected {
            return Err(bad(&format!("payload holds {} bytes, header describes {}", body.len() - hlen, 8 * expected)));
        }
        let mut bundle = Self {
            config: header.config,
            meta: header.meta,
            encoder: ParameterSet::new(),
            action_encoder: ParameterSet::new(),
            predictor: ParameterSet::new(),
            decoder: ParameterSet::new(),
        };
        for entry in header.tensors {
            if !GROUPS.contains(&entry.group.as_str()) {
                return Err(bad(&format!("unknown group `{}`", entry.group)));
            }
            let n = entry.shape.iter().product();
            let t = Tensor::new(&entry.shape, values.by_ref().take(n).collect())?;
            let ps = bundle.group_mut(&entry.group);
            if entry.buffer {
                ps.insert_buffer(entry.name, t);
            } else {
                ps.insert(entry.name, t);
            }
        }
        bundle.check_against_architecture()?;
        Ok(bundle)
    }

    /// Every tensor the architecture defines is present with the right shape.
    fn check_against_architecture(&self) -> Result<()> {
        let fresh = Self::init(&self.config, self.meta.clone(), &mut RngState::new(0))?;
        for g in GROUPS {
            let (want, got) = (fresh.group(g), self.group(g));
            for (name, p) in want.iter() {
                let have = got.get(name).map_err(|_| JepaError::Format(format!("checkpoint lacks {g}/{name}")))?;
                if have.value.shape() != p.value.shape() {
                    return Err(JepaError::Format(format!("checkpoint {g}/{name} has the wrong shape")));
                }
            }
            for (name, t) in want.buffers() {
                let have = got.buffer(name).map_err(|_| JepaError::Format(format!("checkpoint lacks {g}/{name}")))?;
                if have.shape() != t.shape() {
                    return Err(JepaError::Format(format!("checkpoint {g}/{name} has the wrong shape")));
                }
            }
        }
        Ok(())
    }

    /// Writes `dir/model.ckpt`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(CHECKPOINT_FILE);
        fs::write(&path, self.to_bytes()?)?;
        Ok(path)
    }

    /// Reads `dir/model.ckpt`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_FILE);
        if !path.is_file() {
            return Err(JepaError::MissingCheckpoint(path));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}
