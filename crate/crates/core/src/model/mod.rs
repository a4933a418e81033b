//! The full per-modality head: projections, fusion graph, GATv2, final
//! stack, ITM discriminator and checkpoints.

mod checkpoint;
mod config;
mod features;
mod forward;
mod params;

pub use checkpoint::{
    checkpoint_digest, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{InputModel, ModelConfig, Variant};
pub use features::{FeatureSet, ItemFeatures};
pub use forward::{
    discriminator_on_tape, embed, embed_batch, similarity, weighted_similarity, Dropout,
};
pub use params::{HadaParams, Phase, ALPHA, DEFAULT_TAU, ITM_WEIGHT, TAU};
