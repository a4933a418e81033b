use std::rc::Rc;

use crate::featstore::Modality;
use crate::model::Dropout;
use crate::model::{
    discriminator_on_tape, embed_batch, HadaParams, ItemFeatures, ALPHA, ITM_WEIGHT, TAU,
};
use crate::numerics::{BoundParams, Tape, Tensor, Var};
use crate::{Error, Scalar};

/// Probability clamp before taking logs in the matching loss.
pub const PROB_EPS: f64 = 1e-12;

/// Symmetric contrastive loss over an `M × M` similarity matrix:
/// `(1/M) Σ_m (−log softmax_row(S/τ)[m,m] − log softmax_col(S/τ)[m,m])`.
pub fn itc_loss<S: Scalar>(tape: &mut Tape<S>, sim: Var, tau: Var) -> Result<Var, Error> {
    let (m, n) = tape.value(sim).dims2()?;
    if m != n || m < 2 {
        return Err(Error::Input(format!(
            "contrastive loss needs a square batch of at least 2, got {m}×{n}"
        )));
    }
    let logits = tape.div_scalar(sim, tau)?;
    let diag: Vec<usize> = (0..m).map(|k| k * m + k).collect();
    let rows = tape.log_softmax_rows(logits)?;
    let i2t = tape.pick(rows, diag.clone())?;
    let cols_t = tape.transpose(logits)?;
    let cols = tape.log_softmax_rows(cols_t)?;
    let t2i = tape.pick(cols, diag)?;
    let both = tape.concat_rows(&[i2t, t2i])?;
    let total = tape.sum(both);
    Ok(tape.scale(total, -S::one() / S::lit(m as f64)))
}

pub fn itc_loss_value<S: Scalar>(sim: &Tensor<S>, tau: S) -> Result<S, Error> {
    let mut tape = Tape::new();
    let s = tape.constant(sim.clone());
    let t = tape.constant(Tensor::scalar(tau));
    let l = itc_loss(&mut tape, s, t)?;
    Ok(tape.value(l).item())
}

/// Hardest in-batch negative per image (a text) and per text (an image).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardNegatives {
    pub text_for_image: Vec<usize>,
    pub image_for_text: Vec<usize>,
}

fn argmax_excluding<S: Scalar>(values: impl Iterator<Item = S>, skip: usize) -> usize {
    let mut best: Option<(usize, S)> = None;
    for (j, v) in values.enumerate() {
        if j == skip {
            continue;
        }
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((j, v)),
        }
    }
    best.map(|b| b.0).expect("at least two candidates")
}

/// Argmax over `j ≠ m` of `S[m][j]` (texts) and of `S[i][m]` (images),
/// ties to the lowest index.
pub fn mine_hard_negatives<S: Scalar>(sim: &Tensor<S>) -> Result<HardNegatives, Error> {
    let (m, n) = sim.dims2()?;
    if m != n || m < 2 {
        return Err(Error::Input(format!(
            "hard-negative mining needs a square batch of at least 2, got {m}×{n}"
        )));
    }
    Ok(HardNegatives {
        text_for_image: (0..m)
            .map(|i| argmax_excluding(sim.row_slice(i).iter().copied(), i))
            .collect(),
        image_for_text: (0..m)
            .map(|t| argmax_excluding((0..m).map(|i| sim.get(i, t)), t))
            .collect(),
    })
}

/// Binary cross-entropy over `M` positives and `2M` mined negatives,
/// scaled by `1/(3M)`.
pub fn itm_loss<S: Scalar>(
    tape: &mut Tape<S>,
    hp: Var,
    hs: Var,
    w_dc: Var,
    negatives: &HardNegatives,
) -> Result<Var, Error> {
    let m = tape.value(hp).rows();
    let neg_t = tape.gather_rows(hs, Rc::from(negatives.text_for_image.as_slice()))?;
    let neg_i = tape.gather_rows(hp, Rc::from(negatives.image_for_text.as_slice()))?;
    let left = tape.concat_rows(&[hp, hp, neg_i])?;
    let right = tape.concat_rows(&[hs, neg_t, hs])?;
    let p = discriminator_on_tape(tape, left, right, w_dc)?;
    let eps = S::lit(PROB_EPS);
    let p = tape.clamp(p, eps, S::one() - eps);
    let pos = tape.pick(p, (0..m).collect())?;
    let neg = tape.pick(p, (m..3 * m).collect())?;
    let neg = tape.scale(neg, -S::one());
    let neg = tape.add_const(neg, S::one());
    let lp = tape.ln(pos);
    let ln = tape.ln(neg);
    let both = tape.concat_rows(&[lp, ln])?;
    let total = tape.sum(both);
    Ok(tape.scale(total, -S::one() / S::lit(3.0 * m as f64)))
}

/// Handles into one batch's loss graph.
#[derive(Clone, Debug)]
pub struct LossVars {
    pub sim: Var,
    pub itc: Var,
    pub itm: Var,
    pub total: Var,
    pub negatives: HardNegatives,
}

/// `M × M` similarity of the anchor model's globals.
pub fn anchor_similarity<S: Scalar>(
    params: &HadaParams<S>,
    images: &[&ItemFeatures<S>],
    texts: &[&ItemFeatures<S>],
) -> Result<Tensor<S>, Error> {
    let a = params
        .config()
        .anchor_index()
        .ok_or_else(|| Error::Config("anchor model missing".into()))?;
    let rows = |items: &[&ItemFeatures<S>]| -> Result<Tensor<S>, Error> {
        let rows: Vec<Vec<S>> = items
            .iter()
            .map(|it| it.globals[a].data().to_vec())
            .collect();
        Ok(Tensor::from_rows(&rows)?)
    };
    Ok(rows(images)?.matmul(&rows(texts)?.transpose()?)?)
}

/// `L_ITC + L_ITM` on already-embedded rows.
///
/// With `anchor` given the similarity is `(1 − α)·⟨h_p,h_s⟩ + α·anchor`;
/// otherwise the fused dot product alone.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    hp: Var,
    hs: Var,
    anchor: Option<Tensor<S>>,
) -> Result<LossVars, Error> {
    let hs_t = tape.transpose(hs)?;
    let fused = tape.matmul(hp, hs_t)?;
    let sim = match anchor {
        Some(a) => {
            let a = tape.constant(a);
            let diff = tape.sub(a, fused)?;
            let shift = tape.mul_scalar(diff, bound.var(ALPHA))?;
            tape.add(fused, shift)?
        }
        None => fused,
    };
    let itc = itc_loss(tape, sim, bound.var(TAU))?;
    let negatives = mine_hard_negatives(tape.value(sim))?;
    let itm = itm_loss(tape, hp, hs, bound.var(ITM_WEIGHT), &negatives)?;
    let total = tape.add(itc, itm)?;
    Ok(LossVars {
        sim,
        itc,
        itm,
        total,
        negatives,
    })
}

/// Embeds a paired batch (image `m` ↔ text `m`) and builds its loss.
/// `weighted` selects the α-blended similarity.
pub fn batch_loss<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    params: &HadaParams<S>,
    images: &[&ItemFeatures<S>],
    texts: &[&ItemFeatures<S>],
    weighted: bool,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<LossVars, Error> {
    if images.len() != texts.len() {
        return Err(Error::Input(format!(
            "{} images paired with {} texts",
            images.len(),
            texts.len()
        )));
    }
    let cfg = params.config();
    let hp = embed_batch(
        tape,
        bound,
        cfg,
        images,
        Modality::Image,
        dropout.as_deref_mut(),
    )?;
    let hs = embed_batch(
        tape,
        bound,
        cfg,
        texts,
        Modality::Text,
        dropout,
    )?;
    let anchor = if weighted {
        Some(anchor_similarity(params, images, texts)?)
    } else {
        None
    };
    total_loss(tape, bound, hp, hs, anchor)
}
