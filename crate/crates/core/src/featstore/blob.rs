//! `features.bin` codec.
//!
//! Little-endian throughout:
//!
//! ```text
//! "HADF" | u32 version | u64 record count
//! per record:
//!   u32 id len | id | u8 modality | u32 model len | model
//!   u32 rows (N + 1) | u32 d_tok | rows·d_tok f64 | u32 d_glob | d_glob f64
//! ```

use std::fs;
use std::path::Path;

use crate::featstore::{FeatureRecord, Modality, StoreError, StoreManifest, FORMAT_VERSION};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"HADF";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";

pub fn encode_records(records: &[FeatureRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        put_str(&mut out, &r.item_id);
        out.push(r.modality.tag());
        put_str(&mut out, &r.model_id);
        out.extend_from_slice(&(r.tokens.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(r.tokens.cols() as u32).to_le_bytes());
        for v in r.tokens.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(r.global.len() as u32).to_le_bytes());
        for v in &r.global {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).ok_or(StoreError::Truncated)?;
        if end > self.buf.len() {
            return Err(StoreError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String, StoreError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| StoreError::InvalidUtf8)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, StoreError> {
        let bytes = self.take(n.checked_mul(8).ok_or(StoreError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_records(buf: &[u8]) -> Result<Vec<FeatureRecord>, StoreError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4).map_err(|_| StoreError::BadMagic)? != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let count = c.u64()?;
    let mut records = Vec::new();
    for _ in 0..count {
        let item_id = c.string()?;
        let tag = c.u8()?;
        let modality = Modality::from_tag(tag).ok_or(StoreError::InvalidModality(tag))?;
        let model_id = c.string()?;
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let tokens = c.f64s(rows.checked_mul(cols).ok_or(StoreError::Truncated)?)?;
        let d_glob = c.u32()? as usize;
        let global = c.f64s(d_glob)?;
        let tokens = Tensor::matrix(rows, cols, tokens).expect("length matches rows·cols");
        records.push(FeatureRecord {
            item_id,
            modality,
            model_id,
            tokens,
            global,
        });
    }
    if c.pos != buf.len() {
        return Err(StoreError::TrailingBytes(buf.len() - c.pos));
    }
    Ok(records)
}

/// Writes `manifest.json` and `features.bin` into `dir`, creating it.
/// Validation happens before anything touches the filesystem.
pub fn write_store(
    records: &[FeatureRecord],
    manifest: &StoreManifest,
    dir: impl AsRef<Path>,
) -> Result<(), StoreError> {
    manifest.validate_records(records)?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let json = serde_json::to_vec_pretty(manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    fs::write(dir.join(FEATURES_FILE), encode_records(records))?;
    Ok(())
}

pub fn read_store(
    dir: impl AsRef<Path>,
) -> Result<(Vec<FeatureRecord>, StoreManifest), StoreError> {
    let dir = dir.as_ref();
    let manifest: StoreManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let records = decode_records(&fs::read(dir.join(FEATURES_FILE))?)?;
    manifest.validate_records(&records)?;
    Ok((records, manifest))
}
