//! Fuzz strategies and bit-exactness checks for stores and checkpoints.

use hada::featstore::{
    decode_records, encode_records, read_store, write_store, FeatureRecord, ItemEntry, Modality,
    ModelSpec, PairEntry, Split, StoreManifest,
};
use hada::model::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, HadaParams, InputModel,
    ModelConfig, Phase, Variant,
};
use hada::numerics::Tensor;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        -1.0..1.0f64,
    ]
}

#[derive(Debug, Clone)]
pub struct StoreCase {
    pub records: Vec<FeatureRecord>,
    pub manifest: StoreManifest,
}

pub fn store_case() -> impl Strategy<Value = StoreCase> {
    let models = prop::collection::vec((1usize..6, 1usize..5, any::<bool>()), 1..3);
    (models, 1usize..4, 1usize..3).prop_flat_map(|(models, images, texts)| {
        let items: Vec<(String, Modality)> = (0..images)
            .flat_map(|i| {
                std::iter::once((format!("i{i}"), Modality::Image))
                    .chain((0..texts).map(move |t| (format!("t{i}.{t}"), Modality::Text)))
            })
            .collect();
        let mut shapes = Vec::new();
        for (id, modality) in &items {
            for (k, &(d_tok, d_glob, var)) in models.iter().enumerate() {
                shapes.push((id.clone(), *modality, k, d_tok, d_glob, var));
            }
        }
        let records = shapes
            .into_iter()
            .map(|(id, modality, k, d_tok, d_glob, var)| {
                let n = if var { 1usize..5 } else { 3usize..4 };
                n.prop_flat_map(move |rows| {
                    (
                        prop::collection::vec(finite(), rows * d_tok),
                        prop::collection::vec(finite(), d_glob),
                    )
                        .prop_map({
                            let id = id.clone();
                            move |(tok, glob)| {
                                FeatureRecord::new(
                                    id.clone(),
                                    modality,
                                    format!("m{k}"),
                                    Tensor::matrix(rows, d_tok, tok).unwrap(),
                                    glob,
                                )
                                .unwrap()
                            }
                        })
                })
            })
            .collect::<Vec<_>>();
        let splits = prop::collection::vec(
            prop_oneof![
                Just(None),
                Just(Some(Split::Train)),
                Just(Some(Split::Val)),
                Just(Some(Split::Test))
            ],
            images,
        );
        (records, splits).prop_map(move |(records, splits)| {
            let manifest = StoreManifest {
                models: models
                    .iter()
                    .enumerate()
                    .map(|(k, &(d_tok, d_glob, var))| ModelSpec {
                        id: format!("m{k}"),
                        d_tok,
                        d_glob,
                        variable_len: var,
                    })
                    .collect(),
                items: items
                    .iter()
                    .map(|(id, modality)| {
                        let img: usize = id[1..].split('.').next().unwrap().parse().unwrap();
                        ItemEntry {
                            id: id.clone(),
                            modality: *modality,
                            split: splits[img],
                        }
                    })
                    .collect(),
                pairs: (0..images)
                    .map(|i| PairEntry {
                        image_id: format!("i{i}"),
                        text_ids: (0..texts).map(|t| format!("t{i}.{t}")).collect(),
                    })
                    .collect(),
                ..Default::default()
            };
            StoreCase {
                records: records.clone(),
                manifest,
            }
        })
    })
}

pub fn bits(r: &FeatureRecord) -> (Vec<u64>, Vec<u64>) {
    (
        r.tokens.data().iter().map(|x| x.to_bits()).collect(),
        r.global.iter().map(|x| x.to_bits()).collect(),
    )
}

pub fn config_case() -> impl Strategy<Value = (ModelConfig, u64, f64, f64, bool)> {
    (
        prop::collection::vec((1usize..5, 1usize..5), 1..4),
        prop_oneof![Just(Variant::Hada), Just(Variant::B2)],
        1usize..3,
        1usize..3,
        1usize..3,
        any::<bool>(),
        any::<bool>(),
        any::<u64>(),
        (finite(), finite(), any::<bool>()),
    )
        .prop_map(
            |(models, variant, heads, width, depth, bias, norm, seed, (tau, alpha, two))| {
                let models: Vec<InputModel> = models
                    .into_iter()
                    .enumerate()
                    .map(|(k, (d_tok, d_glob))| InputModel {
                        id: format!("m{k}"),
                        d_tok,
                        d_glob,
                    })
                    .collect();
                let cfg = ModelConfig {
                    variant,
                    anchor_model: models.last().unwrap().id.clone(),
                    models,
                    d_shared: 3,
                    d_out: heads * width,
                    heads,
                    d_h: 2 + width,
                    head_depth: depth,
                    projection_bias: bias,
                    normalize_globals: norm,
                    ..Default::default()
                };
                (cfg, seed, tau, alpha, two)
            },
        )
}

pub const CASES: u32 = 128;

pub fn check_store(case: &StoreCase) -> Result<(), TestCaseError> {
    let blob = encode_records(&case.records);
    let back = decode_records(&blob).unwrap();
    prop_assert_eq!(back.len(), case.records.len());
    for (a, b) in back.iter().zip(&case.records) {
        prop_assert_eq!(bits(a), bits(b));
        prop_assert_eq!(&a.item_id, &b.item_id);
        prop_assert_eq!(a.modality, b.modality);
        prop_assert_eq!(&a.model_id, &b.model_id);
    }
    prop_assert_eq!(&encode_records(&back), &blob);

    let dir = tempfile::tempdir().unwrap();
    write_store(&case.records, &case.manifest, dir.path()).unwrap();
    let (records, manifest) = read_store(dir.path()).unwrap();
    prop_assert_eq!(&manifest, &case.manifest);
    prop_assert_eq!(encode_records(&records), blob);
    Ok(())
}

pub fn check_checkpoint(
    (cfg, seed, tau, alpha, two): &(ModelConfig, u64, f64, f64, bool),
) -> Result<(), TestCaseError> {
    let mut params = HadaParams::<f64>::init(cfg, 0.07, *seed).unwrap();
    params.set_tau(*tau);
    params.set_alpha(*alpha);
    if *two {
        params.set_phase(Phase::Two);
    }
    let bytes = encode_checkpoint(&params);
    let back: HadaParams<f64> = decode_checkpoint(&bytes, cfg).unwrap();
    prop_assert_eq!(encode_checkpoint(&back), bytes.clone());
    prop_assert_eq!(back.tau().to_bits(), tau.to_bits());
    prop_assert_eq!(back.alpha().to_bits(), alpha.to_bits());
    prop_assert_eq!(back.phase(), params.phase());
    for (a, b) in back.params().iter().zip(params.params().iter()) {
        prop_assert_eq!(&a.name, &b.name);
        let (x, y): (Vec<u64>, Vec<u64>) = (
            a.value.data().iter().map(|v| v.to_bits()).collect(),
            b.value.data().iter().map(|v| v.to_bits()).collect(),
        );
        prop_assert_eq!(x, y);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/ck.hadc");
    save_checkpoint(&params, &path).unwrap();
    let loaded: HadaParams<f64> = load_checkpoint(&path, cfg).unwrap();
    prop_assert_eq!(encode_checkpoint(&loaded), bytes);
    Ok(())
}
