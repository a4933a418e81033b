use serde::{Deserialize, Serialize};

use crate::eval::{DirectionReport, RetrievalReport};

/// On-disk report: per-direction recalls plus provenance hashes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub i2t: DirectionReport,
    pub t2i: DirectionReport,
    pub total_rsum: f64,
    /// Model-config hash as 8 hex digits.
    pub config_hash: Option<String>,
    /// SHA-256 of the checkpoint file(s), hex.
    pub checkpoint_hash: Option<String>,
}

impl ReportFile {
    pub fn new(
        report: &RetrievalReport,
        config_hash: Option<u32>,
        checkpoint_hash: Option<String>,
    ) -> Self {
        Self {
            i2t: report.i2t,
            t2i: report.t2i,
            total_rsum: report.total_rsum,
            config_hash: config_hash.map(|h| format!("{h:08x}")),
            checkpoint_hash,
        }
    }
}
