//! `SAEC` checkpoints: SAE weights (f64), training config, completed
//! epochs, run seed and, optionally, the Adam state needed to resume.
//!
//! ```text
//! "SAEC" | version u32 | d u32 | n u32 | k u32 | epoch u64 | seed u64
//! | config_len u32 | config JSON
//! | w_enc n·d f64 | b_enc n f64 | w_dec n·d f64 | b_dec d f64
//! | has_optimizer u8 | 4 × (step u64, beta1, beta2, eps f64, m[len], v[len])
//! | crc32 u32
//! ```

use std::path::Path;

use super::{push_crc, read_all, verify_crc, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Matrix};
use crate::sae::SaeParams;
use crate::training::{SaeOptimizer, TrainConfig, TrainState};

const MAGIC: &[u8; 4] = b"SAEC";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 16 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: SaeParams,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: Option<SaeOptimizer>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Checkpoint {
            params: state.params.clone(),
            config: state.config.clone(),
            epoch: state.epoch,
            optimizer: Some(state.optimizer.clone()),
        }
    }

    /// Training state to resume from; requires saved optimizer state.
    pub fn into_train_state(self) -> Result<TrainState> {
        let optimizer = self
            .optimizer
            .ok_or_else(|| Error::invalid("checkpoint has no optimizer state to resume from"))?;
        Ok(TrainState {
            params: self.params,
            optimizer,
            config: self.config,
            epoch: self.epoch,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let p = &ckpt.params;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(p.input_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(p.latent_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(p.k() as u32).to_le_bytes());
    buf.extend_from_slice(&(ckpt.epoch as u64).to_le_bytes());
    buf.extend_from_slice(&ckpt.config.seed.to_le_bytes());
    let cfg = serde_json::to_vec(&ckpt.config)?;
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg);
    put_f64s(&mut buf, p.w_enc().as_slice());
    put_f64s(&mut buf, p.b_enc());
    put_f64s(&mut buf, p.w_dec_columns().as_slice());
    put_f64s(&mut buf, p.b_dec());
    match &ckpt.optimizer {
        None => buf.push(0),
        Some(opt) => {
            if opt.tensors.len() != 4 {
                return Err(Error::invalid("optimizer state must track four tensors"));
            }
            buf.push(1);
            for s in &opt.tensors {
                buf.extend_from_slice(&s.step_count.to_le_bytes());
                put_f64s(&mut buf, &[s.beta1, s.beta2, s.epsilon]);
                put_f64s(&mut buf, &s.first_moment);
                put_f64s(&mut buf, &s.second_moment);
            }
        }
    }
    push_crc(&mut buf);
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected SAEC".into(),
        });
    }
    if bytes.len() >= 8 {
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
    }
    let payload = verify_crc(bytes, HEADER_LEN)?;
    let mut r = Reader::new(payload);
    r.take(8, "magic and version")?;
    let d = r.u32("input dim")? as usize;
    let n = r.u32("latent dim")? as usize;
    let k = r.u32("k")? as usize;
    let epoch = r.u64("epoch")? as usize;
    let seed = r.u64("seed")?;
    let cfg_len = r.u32("config length")? as usize;
    let at = r.offset();
    let cfg_bytes = r.take(cfg_len, "config")?;
    let config: TrainConfig = serde_json::from_slice(cfg_bytes).map_err(|e| Error::Format {
        offset: at,
        message: format!("config: {e}"),
    })?;
    if config.seed != seed {
        return Err(Error::Format {
            offset: at,
            message: "seed in header disagrees with config".into(),
        });
    }
    let nd = n.checked_mul(d).ok_or_else(|| r.err("shape overflow"))?;
    if nd.saturating_mul(16) > r.remaining() {
        return Err(r.err(format!("weights for d={d}, n={n} exceed file size")));
    }
    let at = r.offset();
    let w_enc = r.f64s(nd, "w_enc")?;
    let b_enc = r.f64s(n, "b_enc")?;
    let w_dec = r.f64s(nd, "w_dec")?;
    let b_dec = r.f64s(d, "b_dec")?;
    let params = SaeParams::new(
        Matrix::from_vec(n, d, w_enc)?,
        b_enc,
        Matrix::from_vec(n, d, w_dec)?,
        b_dec,
        k,
    )
    .map_err(|e| Error::Format {
        offset: at,
        message: e.to_string(),
    })?;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let mut tensors = Vec::with_capacity(4);
            for len in [nd, n, nd, d] {
                let step_count = r.u64("adam step")?;
                let beta1 = r.f64("beta1")?;
                let beta2 = r.f64("beta2")?;
                let epsilon = r.f64("epsilon")?;
                let first_moment = r.f64s(len, "first moment")?;
                let second_moment = r.f64s(len, "second moment")?;
                tensors.push(AdamState {
                    first_moment,
                    second_moment,
                    step_count,
                    beta1,
                    beta2,
                    epsilon,
                });
            }
            Some(SaeOptimizer { tensors })
        }
        other => return Err(r.err(format!("bad optimizer flag {other}"))),
    };
    if r.remaining() != 0 {
        return Err(r.err(format!("{} unexpected trailing bytes", r.remaining())));
    }
    Ok(Checkpoint {
        params,
        config,
        epoch,
        optimizer,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&read_all(path.as_ref())?)
}

/// Loads a checkpoint and insists on the given input/latent dimensions.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, input_dim: usize, latent_dim: usize) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.params.input_dim() != input_dim {
        return Err(Error::dim(input_dim, ckpt.params.input_dim(), "checkpoint input dimension"));
    }
    if ckpt.params.latent_dim() != latent_dim {
        return Err(Error::dim(latent_dim, ckpt.params.latent_dim(), "checkpoint latent dimension"));
    }
    Ok(ckpt)
}
