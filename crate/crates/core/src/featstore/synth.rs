//! Synthetic stand-ins for upstream encoders.
//!
//! Each image draws a latent vector `z`; every synthetic model `i` sees it
//! through fixed random maps `P_i` (globals) and `Q_i` (tokens). Both
//! modalities share the maps, so an image and its texts agree up to noise,
//! and different models give different noisy views of the same latent.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::featstore::{
    FeatureRecord, ItemEntry, Modality, ModelSpec, PairEntry, StoreError, StoreManifest,
};
use crate::numerics::Tensor;

/// Number of non-CLS tokens a synthetic model emits per item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCount {
    Fixed(usize),
    /// Uniform over `min..=max`.
    Range {
        min: usize,
        max: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModel {
    pub id: String,
    pub d_tok: usize,
    pub d_glob: usize,
    pub tokens: TokenCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Number of image items; each gets `texts_per_image` texts.
    pub images: usize,
    pub texts_per_image: usize,
    pub latent_dim: usize,
    pub models: Vec<SyntheticModel>,
    /// Standard deviation of the per-feature Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            images: 64,
            texts_per_image: 1,
            latent_dim: 16,
            models: vec![
                SyntheticModel {
                    id: "alpha".into(),
                    d_tok: 24,
                    d_glob: 16,
                    tokens: TokenCount::Fixed(8),
                },
                SyntheticModel {
                    id: "beta".into(),
                    d_tok: 32,
                    d_glob: 32,
                    tokens: TokenCount::Range { min: 4, max: 12 },
                },
            ],
            noise: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::Config(m));
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if self.latent_dim == 0 || self.texts_per_image == 0 {
            return bad("latent_dim and texts_per_image must be >= 1".into());
        }
        if self.models.is_empty() {
            return bad("at least one synthetic model is required".into());
        }
        for m in &self.models {
            if m.d_tok == 0 || m.d_glob == 0 {
                return bad(format!("model {:?} has a zero dimension", m.id));
            }
            if let TokenCount::Range { min, max } = m.tokens {
                if min > max {
                    return bad(format!(
                        "model {:?} token range {min}..={max} is empty",
                        m.id
                    ));
                }
            }
        }
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate synthetic model id".into());
        }
        Ok(())
    }
}

struct ModelMaps {
    global: Tensor<f64>,
    token: Tensor<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.into_iter().map(|x| x / norm).collect()
    } else {
        v
    }
}

pub fn image_id(m: usize) -> String {
    format!("img-{m:05}")
}

pub fn text_id(m: usize, k: usize) -> String {
    format!("txt-{m:05}-{k}")
}

/// Generates records and a manifest (no split labels). A pure function of
/// `cfg`.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
) -> Result<(Vec<FeatureRecord>, StoreManifest), StoreError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let maps: Vec<ModelMaps> = cfg
        .models
        .iter()
        .map(|m| ModelMaps {
            global: Tensor::matrix(
                cfg.latent_dim,
                m.d_glob,
                gaussian(&mut rng, cfg.latent_dim * m.d_glob, scale),
            )
            .expect("sized"),
            token: Tensor::matrix(
                cfg.latent_dim,
                m.d_tok,
                gaussian(&mut rng, cfg.latent_dim * m.d_tok, scale),
            )
            .expect("sized"),
        })
        .collect();

    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut texts = Vec::new();
    let mut pairs = Vec::new();
    for m in 0..cfg.images {
        let z = Tensor::row(gaussian(&mut rng, cfg.latent_dim, 1.0));
        let signals: Vec<(Tensor<f64>, Tensor<f64>)> = maps
            .iter()
            .map(|mp| {
                (
                    z.matmul(&mp.global).expect("latent dims"),
                    z.matmul(&mp.token).expect("latent dims"),
                )
            })
            .collect();

        let mut emit =
            |id: &str, modality: Modality, rng: &mut ChaCha8Rng| -> Result<(), StoreError> {
                for (spec, (g_sig, t_sig)) in cfg.models.iter().zip(&signals) {
                    let n = match spec.tokens {
                        TokenCount::Fixed(n) => n,
                        TokenCount::Range { min, max } => rng.random_range(min..=max),
                    };
                    let mut tokens = Vec::with_capacity((n + 1) * spec.d_tok);
                    for _ in 0..=n {
                        let noise = gaussian(rng, spec.d_tok, cfg.noise);
                        tokens.extend(t_sig.data().iter().zip(noise).map(|(s, e)| s + e));
                    }
                    let noise = gaussian(rng, spec.d_glob, cfg.noise);
                    let global =
                        normalized(g_sig.data().iter().zip(noise).map(|(s, e)| s + e).collect());
                    records.push(FeatureRecord::new(
                        id,
                        modality,
                        spec.id.clone(),
                        Tensor::matrix(n + 1, spec.d_tok, tokens).expect("sized"),
                        global,
                    )?);
                }
                Ok(())
            };

        let img = image_id(m);
        emit(&img, Modality::Image, &mut rng)?;
        let mut text_ids = Vec::with_capacity(cfg.texts_per_image);
        for k in 0..cfg.texts_per_image {
            let t = text_id(m, k);
            emit(&t, Modality::Text, &mut rng)?;
            text_ids.push(t);
        }
        images.push(ItemEntry {
            id: img.clone(),
            modality: Modality::Image,
            split: None,
        });
        texts.extend(text_ids.iter().map(|t| ItemEntry {
            id: t.clone(),
            modality: Modality::Text,
            split: None,
        }));
        pairs.push(PairEntry {
            image_id: img,
            text_ids,
        });
    }

    images.extend(texts);
    let manifest = StoreManifest {
        models: cfg
            .models
            .iter()
            .map(|m| ModelSpec {
                id: m.id.clone(),
                d_tok: m.d_tok,
                d_glob: m.d_glob,
                variable_len: matches!(m.tokens, TokenCount::Range { min, max } if min != max),
            })
            .collect(),
        items: images,
        pairs,
        ..Default::default()
    };
    Ok((records, manifest))
}
