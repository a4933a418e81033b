//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod fuzz;

use hada::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely: central
/// differences at h = 1e-5 carry roughly 1e-10 of round-off.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Central finite differences of `f` with respect to every element of every
/// input tensor.
pub fn central_differences(
    inputs: &[Tensor<f64>],
    h: f64,
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> Vec<Tensor<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].shape());
        for k in 0..inputs[t].len() {
            let orig = work[t].data()[k];
            work[t].data_mut()[k] = orig + h;
            let plus = f(&work);
            work[t].data_mut()[k] = orig - h;
            let minus = f(&work);
            work[t].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest relative error between two lists of gradients.
pub fn max_rel_err(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()).map(|(&x, &y)| rel_err(x, y)))
        .fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

use hada::featstore::{
    generate_synthetic, split_dataset, FeatureRecord, StoreManifest, SyntheticConfig,
    SyntheticModel, TokenCount,
};
use hada::model::{FeatureSet, HadaParams, ModelConfig, Variant};

/// Two small synthetic models with fixed and variable token counts.
pub fn tiny_synth(images: usize, noise: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        images,
        texts_per_image: 1,
        latent_dim: 8,
        models: vec![
            SyntheticModel {
                id: "alpha".into(),
                d_tok: 6,
                d_glob: 5,
                tokens: TokenCount::Fixed(3),
            },
            SyntheticModel {
                id: "beta".into(),
                d_tok: 7,
                d_glob: 4,
                tokens: TokenCount::Range { min: 1, max: 4 },
            },
        ],
        noise,
        seed,
    }
}

pub fn tiny_store(
    cfg: &SyntheticConfig,
    fractions: (f64, f64, f64),
) -> (Vec<FeatureRecord>, StoreManifest) {
    let (records, manifest) = generate_synthetic(cfg).unwrap();
    let manifest = split_dataset(&manifest, fractions, cfg.seed).unwrap();
    (records, manifest)
}

/// `d_shared = d_out = d_h = 8`, two heads.
pub fn tiny_model(manifest: &StoreManifest, variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        d_shared: 8,
        d_out: 8,
        heads: 2,
        d_h: 8,
        ..Default::default()
    }
    .with_models(manifest, &[])
    .unwrap()
}

pub struct Fixture {
    pub config: ModelConfig,
    pub data: FeatureSet<f64>,
    pub params: HadaParams<f64>,
}

pub fn fixture(images: usize, noise: f64, seed: u64, variant: Variant) -> Fixture {
    let (records, manifest) = tiny_store(&tiny_synth(images, noise, seed), (0.5, 0.25, 0.25));
    let config = tiny_model(&manifest, variant);
    let data = FeatureSet::new(&records, manifest, &config.model_ids(), true).unwrap();
    let params = HadaParams::init(&config, 0.07, seed).unwrap();
    Fixture {
        config,
        data,
        params,
    }
}

use hada::model::{Phase, ALPHA, TAU};
use hada::numerics::Tape;
use hada::training::batch_loss;

/// Full-model loss on the first four train pairs (phase-2 weighted
/// similarity, α and τ trainable, no dropout) and its worst relative error
/// against central differences over every parameter element.
pub struct FullGradcheck {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub elements: usize,
    pub groups: Vec<String>,
}

pub fn full_model_gradcheck() -> FullGradcheck {
    let f = fixture(16, 0.3, 11, Variant::Hada);
    let pairs = f.data.pairs_in(hada::featstore::Split::Train);
    assert!(pairs.len() >= 4);
    let images: Vec<_> = pairs[..4]
        .iter()
        .map(|p| f.data.get(p.0).unwrap())
        .collect();
    let texts: Vec<_> = pairs[..4]
        .iter()
        .map(|p| f.data.get(p.1[0]).unwrap())
        .collect();

    let mut params = f.params.clone();
    params.set_phase(Phase::Two);
    params.set_alpha(0.4);
    params.set_tau(0.2);
    params.params_mut().set_trainable(ALPHA, true);
    params.params_mut().set_trainable(TAU, true);
    let mut r = rng(12);
    for p in params.params_mut().iter_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = r.random_range(-0.2..0.2);
            }
        }
    }

    let loss = |params: &HadaParams<f64>, grad: bool| {
        let mut tape = Tape::new();
        let bound = params.params().bind(&mut tape);
        let l = batch_loss(&mut tape, &bound, params, &images, &texts, true, None).unwrap();
        let v = tape.value(l.total).item();
        let gs: Vec<Tensor<f64>> = if grad {
            let g = tape.backward(l.total).unwrap();
            bound.vars().iter().map(|&x| g.get(x)).collect()
        } else {
            Vec::new()
        };
        (v, gs)
    };
    let (_, analytic) = loss(&params, true);
    let names: Vec<String> = params.params().iter().map(|p| p.name.clone()).collect();
    let mut work = params.clone();
    let mut worst = (0.0, String::new());
    let mut elements = 0;
    for (i, name) in names.iter().enumerate() {
        let n = params.params().get(name).unwrap().len();
        for k in 0..n {
            let orig = params.params().get(name).unwrap().data()[k];
            work.params_mut().get_mut(name).unwrap().data_mut()[k] = orig + FD_STEP;
            let plus = loss(&work, false).0;
            work.params_mut().get_mut(name).unwrap().data_mut()[k] = orig - FD_STEP;
            let minus = loss(&work, false).0;
            work.params_mut().get_mut(name).unwrap().data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let e = rel_err(analytic[i].data()[k], numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}]"));
            }
            elements += 1;
        }
    }
    FullGradcheck {
        max_rel_err: worst.0,
        worst_param: worst.1,
        elements,
        groups: names,
    }
}
