//! HADA head: embeddings, scoring modes, discriminator and full gradients.

mod common;

use common::{fixture, full_model_gradcheck};
use hada::eval::{evaluate, score_matrix, ScoreMode};
use hada::featstore::{Modality, Split};
use hada::model::{HadaParams, ItemFeatures, Variant, ITM_WEIGHT};
use hada::numerics::Tensor;

fn split_items<'a>(
    f: &'a common::Fixture,
    split: Split,
) -> (Vec<&'a ItemFeatures<f64>>, Vec<&'a ItemFeatures<f64>>) {
    let pairs = f.data.pairs_in(split);
    let images = pairs.iter().map(|p| f.data.get(p.0).unwrap()).collect();
    let texts = pairs
        .iter()
        .flat_map(|p| p.1.iter().map(|t| f.data.get(t).unwrap()))
        .collect();
    (images, texts)
}

#[test]
fn embeddings_have_unit_norm() {
    for variant in [Variant::Hada, Variant::B2] {
        let f = fixture(12, 0.5, 1, variant);
        let (images, texts) = split_items(&f, Split::Train);
        for (items, m) in [(&images, Modality::Image), (&texts, Modality::Text)] {
            let h = f.params.embed_items(items, m).unwrap();
            assert_eq!(h.cols(), f.config.d_h);
            for r in 0..h.rows() {
                let n: f64 = h.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12, "{variant:?} row {r} norm {n}");
            }
        }
    }
}

#[test]
fn embedding_is_independent_of_batch_composition() {
    let f = fixture(12, 0.5, 2, Variant::Hada);
    let (images, _) = split_items(&f, Split::Train);
    let all = f.params.embed_items(&images, Modality::Image).unwrap();
    for (k, it) in images.iter().enumerate() {
        let one = f.params.embed_items(&[*it], Modality::Image).unwrap();
        for (a, b) in one.data().iter().zip(all.row_slice(k)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn evaluation_is_deterministic() {
    let f = fixture(16, 0.5, 3, Variant::Hada);
    let a = evaluate(Some(&f.params), &f.data, Split::Test, &ScoreMode::Fused).unwrap();
    let b = evaluate(Some(&f.params), &f.data, Split::Test, &ScoreMode::Fused).unwrap();
    assert_eq!(a, b);
}

#[test]
fn weighted_with_full_alpha_is_the_anchor_model() {
    let f = fixture(16, 0.5, 4, Variant::Hada);
    let mut p = f.params.clone();
    p.set_alpha(1.0);
    let (images, texts) = split_items(&f, Split::Test);
    let ids = f.config.model_ids();
    let w = score_matrix(Some(&p), &images, &texts, &ids, &ScoreMode::Weighted).unwrap();
    let s = score_matrix(
        None,
        &images,
        &texts,
        &ids,
        &ScoreMode::Single(f.config.anchor_model.clone()),
    )
    .unwrap();
    assert!(w.max_abs_diff(&s) <= 1e-12);

    p.set_alpha(0.0);
    let w = score_matrix(Some(&p), &images, &texts, &ids, &ScoreMode::Weighted).unwrap();
    let fused = score_matrix(Some(&p), &images, &texts, &ids, &ScoreMode::Fused).unwrap();
    assert_eq!(w, fused);
}

#[test]
fn zero_discriminator_gives_one_half() {
    let f = fixture(8, 0.5, 5, Variant::Hada);
    let mut p = f.params.clone();
    let w = p.params_mut().get_mut(ITM_WEIGHT).unwrap();
    *w = Tensor::zeros(w.shape());
    let h = vec![0.5; f.config.d_h];
    let g = vec![-0.25; f.config.d_h];
    assert_eq!(p.discriminate(&h, &g).unwrap(), 0.5);
}

#[test]
fn discriminator_matches_a_direct_sum() {
    let f = fixture(8, 0.5, 6, Variant::Hada);
    let d = f.config.d_h;
    let h: Vec<f64> = (0..d).map(|k| (k as f64 * 0.37).sin()).collect();
    let g: Vec<f64> = (0..d).map(|k| (k as f64 * 0.91).cos()).collect();
    let w = f.params.params().get(ITM_WEIGHT).unwrap().data();
    let mut z = 0.0;
    for k in 0..d {
        z += w[k] * h[k]
            + w[d + k] * g[k]
            + w[2 * d + k] * (h[k] - g[k]).abs()
            + w[3 * d + k] * h[k] * g[k];
    }
    let want = 1.0 / (1.0 + (-z).exp());
    assert!((f.params.discriminate(&h, &g).unwrap() - want).abs() < 1e-15);
}

#[test]
fn b2_ignores_tokens() {
    let f = fixture(8, 0.5, 7, Variant::B2);
    let (images, _) = split_items(&f, Split::Train);
    let mut changed: Vec<ItemFeatures<f64>> = images.iter().map(|&i| i.clone()).collect();
    for it in &mut changed {
        for t in &mut it.tokens {
            *t = t.map(|x| 3.0 * x + 1.0);
        }
    }
    let refs: Vec<&ItemFeatures<f64>> = changed.iter().collect();
    let a = f.params.embed_items(&images, Modality::Image).unwrap();
    let b = f.params.embed_items(&refs, Modality::Image).unwrap();
    assert_eq!(a, b);
}

#[test]
fn score_modes_require_the_matching_variant() {
    let hada = fixture(8, 0.5, 8, Variant::Hada);
    let b2 = HadaParams::<f64>::init(
        &hada::model::ModelConfig {
            variant: Variant::B2,
            ..hada.config.clone()
        },
        0.07,
        0,
    )
    .unwrap();
    assert!(evaluate(Some(&hada.params), &hada.data, Split::Test, &ScoreMode::B2).is_err());
    assert!(evaluate(Some(&b2), &hada.data, Split::Test, &ScoreMode::Weighted).is_err());
    assert!(evaluate(Some(&b2), &hada.data, Split::Test, &ScoreMode::B2).is_ok());
    assert!(evaluate(None, &hada.data, Split::Test, &ScoreMode::Fused).is_err());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let g = full_model_gradcheck();
    for group in [
        "proj",
        "gat.0.w1",
        "gat.1.w2",
        "gat.0.attn",
        "gat.out",
        "head.1",
        "itm",
        "tau",
        "alpha",
    ] {
        assert!(
            g.groups.iter().any(|n| n.contains(group)),
            "missing {group}"
        );
    }
    assert!(
        g.max_rel_err < 1e-4,
        "max rel err {} at {}",
        g.max_rel_err,
        g.worst_param
    );
}
