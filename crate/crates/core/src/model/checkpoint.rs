//! `.hadc` checkpoint codec.
//!
//! Little-endian:
//!
//! ```text
//! "HADC" | u32 version | u32 config hash | u32 block count
//! per block: u32 name len | name | u32 rank | rank × u32 dims | f64 payload
//! f64 tau | f64 alpha | u32 phase
//! ```
//!
//! Blocks are written in parameter order and exclude τ and α.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::model::params::{ALPHA, DEFAULT_TAU, TAU};
use crate::model::{HadaParams, ModelConfig, Phase};
use crate::numerics::Tensor;
use crate::{Error, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HADC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<S: Scalar>(params: &HadaParams<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.config().hash().to_le_bytes());
    let blocks: Vec<_> = params
        .params()
        .iter()
        .filter(|p| p.name != TAU && p.name != ALPHA)
        .collect();
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for p in blocks {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    out.extend_from_slice(&params.tau().to_f64_lossy().to_le_bytes());
    out.extend_from_slice(&params.alpha().to_f64_lossy().to_le_bytes());
    out.extend_from_slice(&params.phase().number().to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Error> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, Error> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Decodes a checkpoint written for `config`.
pub fn decode_checkpoint<S: Scalar>(
    bytes: &[u8],
    config: &ModelConfig,
) -> Result<HadaParams<S>, Error> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Checkpoint(
            "bad magic bytes: not a checkpoint".into(),
        ));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let found = r.u32()?;
    let expected = config.hash();
    if found != expected {
        return Err(Error::ConfigMismatch { expected, found });
    }

    let mut out = HadaParams::<S>::init(config, DEFAULT_TAU, 0)?;
    let count = r.u32()? as usize;
    let mut seen = vec![false; out.params().len()];
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("block size overflows".into()))?;
        let payload = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("truncated payload".into()))?,
        )?;
        let idx = out
            .params()
            .position(&name)
            .filter(|_| name != TAU && name != ALPHA)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected block {name:?}")))?;
        let slot = out.params_mut().get_mut(&name).expect("position found");
        if slot.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "block {name:?} has shape {shape:?}, config expects {:?}",
                slot.shape()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        *slot = Tensor::new(shape, data)?;
        seen[idx] = true;
    }
    for (p, &ok) in out.params().iter().zip(&seen) {
        if !ok && p.name != TAU && p.name != ALPHA {
            return Err(Error::Checkpoint(format!("missing block {:?}", p.name)));
        }
    }
    let tau = r.f64()?;
    let alpha = r.f64()?;
    let phase = r.u32()?;
    let phase = Phase::from_number(phase)
        .ok_or_else(|| Error::Checkpoint(format!("invalid phase {phase}")))?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    out.set_tau(S::lit(tau));
    out.set_alpha(S::lit(alpha));
    out.set_phase(phase);
    Ok(out)
}

pub fn save_checkpoint<S: Scalar>(
    params: &HadaParams<S>,
    path: impl AsRef<Path>,
) -> Result<(), Error> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
) -> Result<HadaParams<S>, Error> {
    decode_checkpoint(&fs::read(path)?, config)
}

/// Hex SHA-256 of checkpoint bytes, used as report provenance.
pub fn checkpoint_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputModel;

    fn cfg() -> ModelConfig {
        ModelConfig {
            models: vec![InputModel {
                id: "a".into(),
                d_tok: 3,
                d_glob: 2,
            }],
            anchor_model: "a".into(),
            d_shared: 4,
            d_out: 4,
            heads: 2,
            d_h: 4,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_bit_exact() {
        let mut p = HadaParams::<f64>::init(&cfg(), 0.07, 42).unwrap();
        p.set_alpha(0.37);
        p.set_phase(Phase::Two);
        let bytes = encode_checkpoint(&p);
        let q = decode_checkpoint::<f64>(&bytes, &cfg()).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode_checkpoint(&q), bytes);
    }

    #[test]
    fn config_mismatch() {
        let p = HadaParams::<f64>::init(&cfg(), 0.07, 1).unwrap();
        let other = ModelConfig { d_h: 8, ..cfg() };
        let err = decode_checkpoint::<f64>(&encode_checkpoint(&p), &other).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch { .. }));
        assert!(err.to_string().contains("config mismatch"));
    }

    #[test]
    fn corrupt_headers() {
        let p = HadaParams::<f64>::init(&cfg(), 0.07, 1).unwrap();
        let mut bytes = encode_checkpoint(&p);
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(decode_checkpoint::<f64>(&bytes, &cfg())
            .unwrap_err()
            .to_string()
            .contains("unsupported version"));
        let bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3], &cfg()).is_err());
        assert!(decode_checkpoint::<f64>(b"HADF", &cfg()).is_err());
    }
}
