use serde::{Deserialize, Serialize};

use crate::featstore::StoreError;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn tag(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::Text => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Modality::Image),
            1 => Some(Modality::Text),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output of one upstream encoder for one item.
///
/// `tokens` is `(N + 1) × d_tok` with the CLS token in row 0; `global` is
/// the encoder's own pooled embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub item_id: String,
    pub modality: Modality,
    pub model_id: String,
    pub tokens: Tensor<f64>,
    pub global: Vec<f64>,
}

impl FeatureRecord {
    pub fn new(
        item_id: impl Into<String>,
        modality: Modality,
        model_id: impl Into<String>,
        tokens: Tensor<f64>,
        global: Vec<f64>,
    ) -> Result<Self, StoreError> {
        let record = Self {
            item_id: item_id.into(),
            modality,
            model_id: model_id.into(),
            tokens,
            global,
        };
        record.validate()?;
        Ok(record)
    }

    /// Number of non-CLS tokens.
    pub fn patch_count(&self) -> usize {
        self.tokens.rows().saturating_sub(1)
    }

    pub fn d_tok(&self) -> usize {
        self.tokens.cols()
    }

    pub fn d_glob(&self) -> usize {
        self.global.len()
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |detail: String| StoreError::InvalidRecord {
            item: self.item_id.clone(),
            model: self.model_id.clone(),
            detail,
        };
        let (rows, cols) = self
            .tokens
            .dims2()
            .map_err(|e| bad(format!("token matrix: {e}")))?;
        if rows == 0 {
            return Err(bad("token matrix has no CLS row".into()));
        }
        if cols == 0 || self.global.is_empty() {
            return Err(bad("zero-width features".into()));
        }
        if !self.tokens.all_finite() || !self.global.iter().all(|x| x.is_finite()) {
            return Err(bad("non-finite feature value".into()));
        }
        Ok(())
    }
}
