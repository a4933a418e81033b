use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::featstore::StoreManifest;
use crate::Error;

/// Which head architecture to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Projections, fusion graph, GATv2, then the final stack over
    /// `[cls' ∥ globals]`.
    #[default]
    Hada,
    /// Final stack over the concatenated globals only.
    B2,
}

/// Dimensions of one upstream model as the head sees them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputModel {
    pub id: String,
    pub d_tok: usize,
    pub d_glob: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Upstream models in fusion order.
    pub models: Vec<InputModel>,
    /// Model whose original global similarity enters the weighted score.
    pub anchor_model: String,
    pub d_shared: usize,
    pub d_out: usize,
    pub heads: usize,
    pub d_h: usize,
    /// 2: affine → ELU → affine; 1: a single affine.
    pub head_depth: usize,
    pub projection_bias: bool,
    pub leaky_slope: f64,
    /// L2-normalize upstream globals at ingest.
    pub normalize_globals: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Hada,
            models: Vec::new(),
            anchor_model: String::new(),
            d_shared: 512,
            d_out: 512,
            heads: 4,
            d_h: 256,
            head_depth: 2,
            projection_bias: true,
            leaky_slope: crate::gatv2::DEFAULT_LEAKY_SLOPE,
            normalize_globals: true,
        }
    }
}

impl ModelConfig {
    /// Fills `models` from the manifest, keeping `ids` order, or every
    /// manifest model when `ids` is empty. The anchor defaults to the first.
    pub fn with_models(mut self, manifest: &StoreManifest, ids: &[String]) -> Result<Self, Error> {
        let chosen: Vec<String> = if ids.is_empty() {
            manifest.models.iter().map(|m| m.id.clone()).collect()
        } else {
            ids.to_vec()
        };
        self.models = chosen
            .iter()
            .map(|id| {
                manifest
                    .model(id)
                    .map(|m| InputModel {
                        id: m.id.clone(),
                        d_tok: m.d_tok,
                        d_glob: m.d_glob,
                    })
                    .ok_or_else(|| Error::Config(format!("model {id:?} is not in the store")))
            })
            .collect::<Result<_, _>>()?;
        if self.anchor_model.is_empty() {
            if let Some(m) = self.models.first() {
                self.anchor_model = m.id.clone();
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.models.is_empty() {
            return bad("at least one upstream model is required".into());
        }
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate model id".into());
        }
        if self.models.iter().any(|m| m.d_tok == 0 || m.d_glob == 0) {
            return bad("model dimensions must be positive".into());
        }
        if self.anchor_index().is_none() {
            return bad(format!(
                "anchor model {:?} is not among the configured models",
                self.anchor_model
            ));
        }
        if self.d_shared == 0 || self.d_h == 0 {
            return bad("d_shared and d_h must be positive".into());
        }
        crate::gatv2::head_width(self.d_out, self.heads)?;
        if !(1..=2).contains(&self.head_depth) {
            return bad(format!(
                "head_depth must be 1 or 2, got {}",
                self.head_depth
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!(
                "leaky_slope must be in (0,1), got {}",
                self.leaky_slope
            ));
        }
        Ok(())
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    pub fn anchor_index(&self) -> Option<usize> {
        self.models.iter().position(|m| m.id == self.anchor_model)
    }

    /// Width of the final stack's input.
    pub fn head_input_dim(&self) -> usize {
        let globals: usize = self.models.iter().map(|m| m.d_glob).sum();
        match self.variant {
            Variant::Hada => self.models.len() * self.d_out + globals,
            Variant::B2 => globals,
        }
    }

    /// First four bytes (little-endian) of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> u32 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u32::from_le_bytes(digest[..4].try_into().expect("4 bytes"))
    }
}
