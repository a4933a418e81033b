//! Graph-based amalgamation of frozen encoder features for image-text
//! retrieval.
//!
//! Token and global features from several upstream encoders are projected
//! into a shared space, wired into a token → CLS graph per modality, updated
//! by a multi-head GATv2 layer and pooled into one unit embedding per item.
//! The head is trained with contrastive and matching objectives and
//! evaluated with bidirectional recall.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root pin the `f64` instantiation used by the CLI.

mod error;
pub mod eval;
pub mod featstore;
pub mod gatv2;
pub mod graph;
pub mod model;
pub mod numerics;
mod scalar;
pub mod training;

pub use error::Error;
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tape64 = numerics::Tape<f64>;
