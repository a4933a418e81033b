use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::featstore::Modality;
use crate::gatv2::{init_uniform, GatHead, GatLayer};
use crate::graph::{Affine, ProjectionParams};
use crate::model::{ModelConfig, Variant};
use crate::numerics::{ParamSet, Tensor};
use crate::{Error, Scalar};

pub const TAU: &str = "tau";
pub const ALPHA: &str = "alpha";
pub const ITM_WEIGHT: &str = "itm.weight";
pub const DEFAULT_TAU: f64 = 0.07;

/// Training phase: fused similarity only, or the α-weighted blend.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn number(self) -> u32 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }

    pub fn from_number(n: u32) -> Option<Self> {
        match n {
            1 => Some(Phase::One),
            2 => Some(Phase::Two),
            _ => None,
        }
    }
}

pub(crate) fn proj_weight(m: Modality, model: &str) -> String {
    format!("{m}.proj.{model}.weight")
}

pub(crate) fn proj_bias(m: Modality, model: &str) -> String {
    format!("{m}.proj.{model}.bias")
}

pub(crate) fn gat_name(m: Modality, head: usize, part: &str) -> String {
    format!("{m}.gat.{head}.{part}")
}

pub(crate) fn gat_out(m: Modality, part: &str) -> String {
    format!("{m}.gat.out.{part}")
}

pub(crate) fn head_name(m: Modality, layer: usize, part: &str) -> String {
    format!("{m}.head.{layer}.{part}")
}

/// Every trainable tensor of one HADA (or B2) head, plus τ and α.
#[derive(Clone, Debug, PartialEq)]
pub struct HadaParams<S> {
    config: ModelConfig,
    params: ParamSet<S>,
    phase: Phase,
}

impl<S: Scalar> HadaParams<S> {
    /// Seeded initialization: weights uniform in `±1/√fan_in`, biases 0,
    /// α = 0, phase 1.
    pub fn init(config: &ModelConfig, tau: f64, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for m in [Modality::Image, Modality::Text] {
            if config.variant == Variant::Hada {
                for model in &config.models {
                    p.insert(
                        proj_weight(m, &model.id),
                        init_uniform(&mut rng, model.d_tok, model.d_tok, config.d_shared),
                        true,
                    );
                    if config.projection_bias {
                        p.insert(
                            proj_bias(m, &model.id),
                            Tensor::zeros(&[1, config.d_shared]),
                            true,
                        );
                    }
                }
                let layer =
                    GatLayer::<S>::init(&mut rng, config.d_shared, config.d_out, config.heads)?;
                for (h, head) in layer.heads.into_iter().enumerate() {
                    p.insert(gat_name(m, h, "w1"), head.w1, true);
                    p.insert(gat_name(m, h, "w2"), head.w2, true);
                    p.insert(gat_name(m, h, "attn"), head.attn, true);
                }
                p.insert(gat_out(m, "weight"), layer.out_w, true);
                p.insert(gat_out(m, "bias"), layer.out_b, true);
            }
            let mut fan_in = config.head_input_dim();
            for k in 0..config.head_depth {
                p.insert(
                    head_name(m, k, "weight"),
                    init_uniform(&mut rng, fan_in, fan_in, config.d_h),
                    true,
                );
                p.insert(
                    head_name(m, k, "bias"),
                    Tensor::zeros(&[1, config.d_h]),
                    true,
                );
                fan_in = config.d_h;
            }
        }
        let d_dc = 4 * config.d_h;
        p.insert(ITM_WEIGHT, init_uniform(&mut rng, d_dc, d_dc, 1), true);
        p.insert(TAU, Tensor::scalar(S::lit(tau)), false);
        p.insert(ALPHA, Tensor::scalar(S::zero()), false);
        Ok(Self {
            config: config.clone(),
            params: p,
            phase: Phase::One,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn tau(&self) -> S {
        self.get(TAU).item()
    }

    pub fn alpha(&self) -> S {
        self.get(ALPHA).item()
    }

    pub fn set_tau(&mut self, v: S) {
        *self.params.get_mut(TAU).expect("tau") = Tensor::scalar(v);
    }

    pub fn set_alpha(&mut self, v: S) {
        *self.params.get_mut(ALPHA).expect("alpha") = Tensor::scalar(v);
    }

    pub(crate) fn get(&self, name: &str) -> &Tensor<S> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} missing"))
    }

    /// Number of scalar weights, τ and α excluded.
    pub fn weight_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name != TAU && p.name != ALPHA)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn projection_params(&self) -> ProjectionParams<S> {
        let mut out = ProjectionParams::default();
        if self.config.variant == Variant::B2 {
            return out;
        }
        for m in [Modality::Image, Modality::Text] {
            for model in &self.config.models {
                out.maps.insert(
                    (model.id.clone(), m),
                    Affine {
                        weight: self.get(&proj_weight(m, &model.id)).clone(),
                        bias: self.params.get(&proj_bias(m, &model.id)).cloned(),
                    },
                );
            }
        }
        out
    }

    pub fn gat_layer(&self, m: Modality) -> Option<GatLayer<S>> {
        if self.config.variant == Variant::B2 {
            return None;
        }
        let heads = (0..self.config.heads)
            .map(|h| GatHead {
                w1: self.get(&gat_name(m, h, "w1")).clone(),
                w2: self.get(&gat_name(m, h, "w2")).clone(),
                attn: self.get(&gat_name(m, h, "attn")).clone(),
            })
            .collect();
        Some(GatLayer {
            heads,
            out_w: self.get(&gat_out(m, "weight")).clone(),
            out_b: self.get(&gat_out(m, "bias")).clone(),
            leaky_slope: S::lit(self.config.leaky_slope),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputModel;

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            models: vec![
                InputModel {
                    id: "a".into(),
                    d_tok: 5,
                    d_glob: 4,
                },
                InputModel {
                    id: "b".into(),
                    d_tok: 6,
                    d_glob: 3,
                },
            ],
            anchor_model: "a".into(),
            d_shared: 8,
            d_out: 8,
            heads: 2,
            d_h: 8,
            ..Default::default()
        }
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = HadaParams::<f64>::init(&small_config(), 0.07, 42).unwrap();
        let b = HadaParams::<f64>::init(&small_config(), 0.07, 42).unwrap();
        let c = HadaParams::<f64>::init(&small_config(), 0.07, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_scalars() {
        let p = HadaParams::<f64>::init(&small_config(), 0.07, 1).unwrap();
        assert_eq!(p.get("image.proj.a.weight").shape(), &[5, 8]);
        assert_eq!(p.get("text.gat.1.attn").shape(), &[4, 1]);
        assert_eq!(p.get("image.head.0.weight").shape(), &[2 * 8 + 7, 8]);
        assert_eq!(p.get(ITM_WEIGHT).shape(), &[32, 1]);
        assert_eq!(p.tau(), 0.07);
        assert_eq!(p.alpha(), 0.0);
        assert_eq!(p.phase(), Phase::One);
        assert_eq!(p.gat_layer(Modality::Text).unwrap().heads.len(), 2);
    }

    #[test]
    fn b2_has_fewer_weights() {
        let hada = HadaParams::<f64>::init(&small_config(), 0.07, 1).unwrap();
        let b2_cfg = ModelConfig {
            variant: Variant::B2,
            ..small_config()
        };
        let b2 = HadaParams::<f64>::init(&b2_cfg, 0.07, 1).unwrap();
        assert!(b2.weight_count() < hada.weight_count());
        assert!(b2.gat_layer(Modality::Image).is_none());
        assert_eq!(b2.get("image.head.0.weight").shape(), &[7, 8]);
    }
}
