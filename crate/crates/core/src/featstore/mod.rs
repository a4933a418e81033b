//! On-disk upstream features: manifest, binary blob, synthetic generator.

mod blob;
mod manifest;
mod record;
mod split;
mod synth;

pub use blob::{
    decode_records, encode_records, read_store, write_store, FEATURES_FILE, MAGIC, MANIFEST_FILE,
};
pub use manifest::{ItemEntry, ModelSpec, PairEntry, Split, StoreManifest, FORMAT_VERSION};
pub use record::{FeatureRecord, Modality};
pub use split::split_dataset;
pub use synth::{
    generate_synthetic, image_id, text_id, SyntheticConfig, SyntheticModel, TokenCount,
};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad magic bytes: not a feature blob")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload")]
    Truncated,
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("identifier is not valid UTF-8")]
    InvalidUtf8,
    #[error("invalid modality tag {0}")]
    InvalidModality(u8),
    #[error("record {item:?}/{model:?}: {detail}")]
    InvalidRecord {
        item: String,
        model: String,
        detail: String,
    },
    #[error("record {item:?}/{model:?}: dims (d_tok, d_glob) {found:?} do not match manifest {expected:?}")]
    DimMismatch {
        item: String,
        model: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid store: {0}")]
    Validation(String),
    #[error("config: {0}")]
    Config(String),
}
