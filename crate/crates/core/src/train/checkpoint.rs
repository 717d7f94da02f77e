//! Resumable training state on disk.
//!
//! Layout, all little-endian:
//!
//! | field | encoding |
//! |---|---|
//! | parameter block | see [`DenoiserParams::to_bytes`] |
//! | Adam first moments | `f64` × parameter count, parameter order |
//! | Adam second moments | `f64` × parameter count, parameter order |
//! | step | `u64` |
//! | generator state | 32-byte key, `u64` stream, `u128` word position |
//! | config digest | SHA-256 of the config text |
//! | config text | `u32` length, then UTF-8 |

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::denoiser::{read_f64s, write_f64s, DenoiserParams};
use crate::error::{Error, Result};
use crate::rng::{RngState, RNG_STATE_BYTES};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
    pub rng: RngState,
    pub config: TrainConfig,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl Checkpoint {
    /// Everything except the trailing config digest and text.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = self.params.to_bytes();
        write_f64s(&mut out, &self.adam_m);
        write_f64s(&mut out, &self.adam_v);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.to_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.to_text();
        let mut out = self.state_bytes();
        out.extend_from_slice(&Sha256::digest(text.as_bytes()));
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let (params, mut pos) = DenoiserParams::from_bytes(bytes)?;
        let n = params.values().len();
        let mut take = |len: usize, what: &str| -> Result<&[u8]> {
            let chunk = bytes
                .get(pos..pos + len)
                .ok_or_else(|| corrupt(format!("truncated in {what}")))?;
            pos += len;
            Ok(chunk)
        };
        let adam_m = read_f64s(take(8 * n, "first moments")?);
        let adam_v = read_f64s(take(8 * n, "second moments")?);
        let step = u64::from_le_bytes(take(8, "step")?.try_into().unwrap());
        let rng = RngState::from_bytes(
            take(RNG_STATE_BYTES, "generator state")?
                .try_into()
                .unwrap(),
        );
        let digest: [u8; 32] = take(32, "digest")?.try_into().unwrap();
        let len = u32::from_le_bytes(take(4, "config length")?.try_into().unwrap()) as usize;
        let text = take(len, "config text")?;
        if pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - pos)));
        }
        if <[u8; 32]>::from(Sha256::digest(text)) != digest {
            return Err(corrupt("config digest mismatch"));
        }
        let text = std::str::from_utf8(text).map_err(|_| corrupt("config text is not UTF-8"))?;
        let config = TrainConfig::from_text(text).map_err(|e| corrupt(format!("config: {e}")))?;
        if adam_v.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || adam_m.iter().any(|v| !v.is_finite())
        {
            return Err(corrupt("optimizer moments out of range"));
        }
        Ok(Checkpoint {
            params,
            adam_m,
            adam_v,
            step,
            rng,
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
