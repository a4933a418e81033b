use std::path::PathBuf;

use crate::featstore::StoreError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("graph: {0}")]
    Graph(String),
    #[error("input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config mismatch: checkpoint was written for config {found:#010x}, expected {expected:#010x}")]
    ConfigMismatch { expected: u32, found: u32 },
    #[error("non-finite loss at epoch {epoch}, batch {batch}{}", dump.as_ref().map(|p| format!(" (batch written to {})", p.display())).unwrap_or_default())]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        dump: Option<PathBuf>,
    },
    #[error("eval: {0}")]
    Eval(String),
}
