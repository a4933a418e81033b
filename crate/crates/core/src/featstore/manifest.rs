use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::featstore::{FeatureRecord, Modality, StoreError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub d_tok: usize,
    pub d_glob: usize,
    /// Token counts differ between items.
    pub variable_len: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemEntry {
    pub id: String,
    pub modality: Modality,
    pub split: Option<Split>,
}

/// One image and every text relevant to it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub image_id: String,
    pub text_ids: Vec<String>,
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub version: u32,
    pub models: Vec<ModelSpec>,
    pub items: Vec<ItemEntry>,
    pub pairs: Vec<PairEntry>,
}

impl Default for StoreManifest {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            models: Vec::new(),
            items: Vec::new(),
            pairs: Vec::new(),
        }
    }
}

impl StoreManifest {
    pub fn model(&self, id: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn item(&self, id: &str) -> Option<&ItemEntry> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn split_of(&self) -> BTreeMap<&str, Option<Split>> {
        self.items
            .iter()
            .map(|i| (i.id.as_str(), i.split))
            .collect()
    }

    /// Pairs whose image belongs to `split`.
    pub fn pairs_in(&self, split: Split) -> Vec<&PairEntry> {
        let splits = self.split_of();
        self.pairs
            .iter()
            .filter(|p| splits.get(p.image_id.as_str()).copied().flatten() == Some(split))
            .collect()
    }

    /// Structural checks that do not need the records.
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(self.version));
        }
        let mut models = BTreeSet::new();
        for m in &self.models {
            if !models.insert(m.id.as_str()) {
                return Err(StoreError::Validation(format!(
                    "duplicate model {:?}",
                    m.id
                )));
            }
            if m.d_tok == 0 || m.d_glob == 0 {
                return Err(StoreError::Validation(format!(
                    "model {:?} has a zero dimension",
                    m.id
                )));
            }
        }
        let mut items = BTreeMap::new();
        for i in &self.items {
            if items.insert(i.id.as_str(), i).is_some() {
                return Err(StoreError::Validation(format!("duplicate item {:?}", i.id)));
            }
        }
        for p in &self.pairs {
            let image = items.get(p.image_id.as_str()).ok_or_else(|| {
                StoreError::Validation(format!("pair references unknown image {:?}", p.image_id))
            })?;
            if image.modality != Modality::Image {
                return Err(StoreError::Validation(format!(
                    "{:?} is not an image",
                    p.image_id
                )));
            }
            for t in &p.text_ids {
                let text = items.get(t.as_str()).ok_or_else(|| {
                    StoreError::Validation(format!("pair references unknown text {t:?}"))
                })?;
                if text.modality != Modality::Text {
                    return Err(StoreError::Validation(format!("{t:?} is not a text")));
                }
            }
        }
        Ok(())
    }

    /// Checks the records against the manifest: every record names a listed
    /// item and model with the right modality and fixed dims.
    pub fn validate_records(&self, records: &[FeatureRecord]) -> Result<(), StoreError> {
        self.validate()?;
        let items: BTreeMap<&str, &ItemEntry> =
            self.items.iter().map(|i| (i.id.as_str(), i)).collect();
        for r in records {
            r.validate()?;
            let spec = self.model(&r.model_id).ok_or_else(|| {
                StoreError::Validation(format!(
                    "record {:?} uses unknown model {:?}",
                    r.item_id, r.model_id
                ))
            })?;
            let item = items.get(r.item_id.as_str()).ok_or_else(|| {
                StoreError::Validation(format!("record for unlisted item {:?}", r.item_id))
            })?;
            if item.modality != r.modality {
                return Err(StoreError::Validation(format!(
                    "record {:?} is {} but the manifest says {}",
                    r.item_id, r.modality, item.modality
                )));
            }
            if r.d_tok() != spec.d_tok || r.d_glob() != spec.d_glob {
                return Err(StoreError::DimMismatch {
                    item: r.item_id.clone(),
                    model: r.model_id.clone(),
                    expected: (spec.d_tok, spec.d_glob),
                    found: (r.d_tok(), r.d_glob()),
                });
            }
        }
        Ok(())
    }
}
