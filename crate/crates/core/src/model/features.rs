use std::collections::BTreeMap;

use crate::featstore::{FeatureRecord, Modality, Split, StoreManifest};
use crate::numerics::Tensor;
use crate::{Error, Scalar};

/// One item's inputs, one entry per configured model in fusion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemFeatures<S> {
    pub id: String,
    pub modality: Modality,
    pub tokens: Vec<Tensor<S>>,
    /// Row vectors `1 × d_glob`.
    pub globals: Vec<Tensor<S>>,
}

impl<S: Scalar> ItemFeatures<S> {
    /// Collects the records of one item. Records of models outside
    /// `model_ids` are ignored; a missing configured model is an error.
    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a FeatureRecord>,
        model_ids: &[String],
        normalize_globals: bool,
    ) -> Result<Self, Error> {
        let mut by_model: BTreeMap<&str, &FeatureRecord> = BTreeMap::new();
        let mut head: Option<&FeatureRecord> = None;
        for r in records {
            if let Some(h) = head {
                if h.item_id != r.item_id {
                    return Err(Error::Input(format!(
                        "records of items {:?} and {:?} mixed",
                        h.item_id, r.item_id
                    )));
                }
            }
            head = Some(r);
            by_model.insert(&r.model_id, r);
        }
        let head = head.ok_or_else(|| Error::Input("no records for item".into()))?;
        let mut tokens = Vec::with_capacity(model_ids.len());
        let mut globals = Vec::with_capacity(model_ids.len());
        for id in model_ids {
            let r = by_model.get(id.as_str()).ok_or_else(|| {
                Error::Input(format!(
                    "item {:?} has no record for model {id:?}",
                    head.item_id
                ))
            })?;
            tokens.push(r.tokens.cast());
            let mut g: Vec<S> = r.global.iter().map(|&x| S::lit(x)).collect();
            if normalize_globals {
                let norm = g.iter().map(|&x| x * x).sum::<S>().sqrt();
                if !(norm > S::zero()) {
                    return Err(Error::Input(format!(
                        "item {:?}, model {id:?}: zero global vector",
                        head.item_id
                    )));
                }
                g.iter_mut().for_each(|x| *x /= norm);
            }
            globals.push(Tensor::row(g));
        }
        Ok(Self {
            id: head.item_id.clone(),
            modality: head.modality,
            tokens,
            globals,
        })
    }
}

/// In-memory view of a store restricted to the configured models.
#[derive(Clone, Debug)]
pub struct FeatureSet<S> {
    pub manifest: StoreManifest,
    pub model_ids: Vec<String>,
    items: BTreeMap<String, ItemFeatures<S>>,
}

impl<S: Scalar> FeatureSet<S> {
    pub fn new(
        records: &[FeatureRecord],
        manifest: StoreManifest,
        model_ids: &[String],
        normalize_globals: bool,
    ) -> Result<Self, Error> {
        let mut grouped: BTreeMap<&str, Vec<&FeatureRecord>> = BTreeMap::new();
        for r in records {
            grouped.entry(&r.item_id).or_default().push(r);
        }
        let items = grouped
            .into_iter()
            .map(|(id, recs)| {
                Ok((
                    id.to_string(),
                    ItemFeatures::from_records(recs, model_ids, normalize_globals)?,
                ))
            })
            .collect::<Result<_, Error>>()?;
        Ok(Self {
            manifest,
            model_ids: model_ids.to_vec(),
            items,
        })
    }

    pub fn get(&self, id: &str) -> Result<&ItemFeatures<S>, Error> {
        self.items
            .get(id)
            .ok_or_else(|| Error::Input(format!("no features for item {id:?}")))
    }

    /// `(image, texts)` pairs whose image is labelled `split`.
    pub fn pairs_in(&self, split: Split) -> Vec<(&str, Vec<&str>)> {
        self.manifest
            .pairs_in(split)
            .into_iter()
            .map(|p| {
                (
                    p.image_id.as_str(),
                    p.text_ids.iter().map(String::as_str).collect(),
                )
            })
            .collect()
    }
}
