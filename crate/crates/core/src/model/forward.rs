use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::featstore::Modality;
use crate::gatv2::{layer_forward, HeadVars, LayerVars};
use crate::graph::GraphLayout;
use crate::model::params::{gat_name, gat_out, head_name, proj_bias, proj_weight, ITM_WEIGHT};
use crate::model::{HadaParams, ItemFeatures, ModelConfig, Variant};
use crate::numerics::{BoundParams, Tape, Tensor, Var};
use crate::{Error, Scalar};

/// Inverted dropout driven by a caller-owned RNG.
pub struct Dropout<'a> {
    p: f64,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Dropout<'a> {
    pub fn new(p: f64, rng: &'a mut ChaCha8Rng) -> Result<Self, Error> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout must be in [0,1), got {p}")));
        }
        Ok(Self { p, rng })
    }

    pub fn apply<S: Scalar>(&mut self, tape: &mut Tape<S>, v: Var) -> Result<Var, Error> {
        if self.p == 0.0 {
            return Ok(v);
        }
        let t = tape.value(v);
        let keep = S::lit(1.0 / (1.0 - self.p));
        let data = (0..t.len())
            .map(|_| {
                if self.rng.random::<f64>() < self.p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mask = Tensor::new(t.shape().to_vec(), data)?;
        Ok(tape.mul_const(v, mask)?)
    }
}

fn maybe_drop<S: Scalar>(
    tape: &mut Tape<S>,
    v: Var,
    dropout: &mut Option<&mut Dropout<'_>>,
) -> Result<Var, Error> {
    match dropout {
        Some(d) => d.apply(tape, v),
        None => Ok(v),
    }
}

/// Embeds a batch of same-modality items on `tape`: `M × d_h`, unit rows.
///
/// Each model's tokens are projected in one stacked product, regrouped
/// per item into a disjoint fusion graph, pushed through the GAT layer and
/// reshaped so row `b` holds `[cls'^(1) ∥ … ∥ cls'^(n)]` of item `b`.
pub fn embed_batch<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    config: &ModelConfig,
    items: &[&ItemFeatures<S>],
    modality: Modality,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Var, Error> {
    if items.is_empty() {
        return Err(Error::Input("cannot embed an empty batch".into()));
    }
    let n = config.models.len();
    for it in items {
        if it.modality != modality {
            return Err(Error::Input(format!(
                "item {:?} is {}, expected {modality}",
                it.id, it.modality
            )));
        }
        if it.tokens.len() != n || it.globals.len() != n {
            return Err(Error::Input(format!(
                "item {:?} carries {} models, config has {n}",
                it.id,
                it.tokens.len()
            )));
        }
    }

    let globals = {
        let width: usize = config.models.iter().map(|m| m.d_glob).sum();
        let mut data = Vec::with_capacity(items.len() * width);
        for it in items {
            for (g, m) in it.globals.iter().zip(&config.models) {
                if g.len() != m.d_glob {
                    return Err(Error::Input(format!(
                        "item {:?}, model {:?}: global width {} != {}",
                        it.id,
                        m.id,
                        g.len(),
                        m.d_glob
                    )));
                }
                data.extend_from_slice(g.data());
            }
        }
        tape.constant(Tensor::matrix(items.len(), width, data)?)
    };

    let head_in = match config.variant {
        Variant::B2 => globals,
        Variant::Hada => {
            let cls = fuse_tokens(tape, bound, config, items, modality, &mut dropout)?;
            tape.concat_cols(&[cls, globals])?
        }
    };

    let mut x = head_in;
    for k in 0..config.head_depth {
        if k > 0 {
            x = tape.elu(x);
        }
        x = tape.affine(
            x,
            bound.var(&head_name(modality, k, "weight")),
            bound.var(&head_name(modality, k, "bias")),
        )?;
    }
    Ok(tape.l2_normalize_rows(x)?)
}

/// Projection, graph and GAT: `M × (n·d_out)`.
fn fuse_tokens<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    config: &ModelConfig,
    items: &[&ItemFeatures<S>],
    modality: Modality,
    dropout: &mut Option<&mut Dropout<'_>>,
) -> Result<Var, Error> {
    let n = config.models.len();
    let mut projected = Vec::with_capacity(n);
    let mut model_offset = Vec::with_capacity(n);
    let mut offset = 0;
    for (i, m) in config.models.iter().enumerate() {
        let mut data = Vec::new();
        let mut rows = 0;
        for it in items {
            let t = &it.tokens[i];
            if t.cols() != m.d_tok {
                return Err(Error::Input(format!(
                    "item {:?}, model {:?}: token width {} != {}",
                    it.id,
                    m.id,
                    t.cols(),
                    m.d_tok
                )));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let tokens = tape.constant(Tensor::matrix(rows, m.d_tok, data)?);
        let w = bound.var(&proj_weight(modality, &m.id));
        let mut p = tape.matmul(tokens, w)?;
        if config.projection_bias {
            p = tape.add_row(p, bound.var(&proj_bias(modality, &m.id)))?;
        }
        projected.push(maybe_drop(tape, p, dropout)?);
        model_offset.push(offset);
        offset += rows;
    }
    let stacked = tape.concat_rows(&projected)?;

    // Item-major node order: item b's rows of model 0, then model 1, ...
    let mut order = Vec::with_capacity(offset);
    let mut within = vec![0usize; n];
    let mut layouts = Vec::with_capacity(items.len());
    let ids = config.model_ids();
    for it in items {
        let counts: Vec<usize> = it.tokens.iter().map(|t| t.rows()).collect();
        for i in 0..n {
            let start = model_offset[i] + within[i];
            order.extend(start..start + counts[i]);
            within[i] += counts[i];
        }
        layouts.push(GraphLayout::for_item(&ids, &counts)?);
    }
    let nodes = tape.gather_rows(stacked, Rc::from(order))?;
    let layout = GraphLayout::batch(&layouts)?;

    let layer = LayerVars {
        heads: (0..config.heads)
            .map(|h| HeadVars {
                w1: bound.var(&gat_name(modality, h, "w1")),
                w2: bound.var(&gat_name(modality, h, "w2")),
                attn: bound.var(&gat_name(modality, h, "attn")),
            })
            .collect(),
        out_w: bound.var(&gat_out(modality, "weight")),
        out_b: bound.var(&gat_out(modality, "bias")),
    };
    let out = layer_forward(
        tape,
        &layer,
        nodes,
        &layout.edge_index(),
        S::lit(config.leaky_slope),
    )?;
    let out = maybe_drop(tape, out, dropout)?;
    Ok(tape.reshape(out, vec![items.len(), n * config.d_out])?)
}

/// `sigmoid(W_dc · [h_p ∥ h_s ∥ |h_p − h_s| ∥ h_p ⊙ h_s])` per row pair.
pub fn discriminator_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    hp: Var,
    hs: Var,
    w_dc: Var,
) -> Result<Var, Error> {
    let diff = tape.sub(hp, hs)?;
    let adiff = tape.abs(diff);
    let prod = tape.mul(hp, hs)?;
    let feat = tape.concat_cols(&[hp, hs, adiff, prod])?;
    let logit = tape.matmul(feat, w_dc)?;
    Ok(tape.sigmoid(logit))
}

/// Rows per tape when embedding for inference.
const EMBED_CHUNK: usize = 128;

impl<S: Scalar> HadaParams<S> {
    /// Eval-mode embeddings, one unit row per item.
    pub fn embed_items(
        &self,
        items: &[&ItemFeatures<S>],
        modality: Modality,
    ) -> Result<Tensor<S>, Error> {
        let mut data = Vec::with_capacity(items.len() * self.config().d_h);
        for chunk in items.chunks(EMBED_CHUNK) {
            let mut tape = Tape::new();
            let bound = self.params().bind(&mut tape);
            let h = embed_batch(&mut tape, &bound, self.config(), chunk, modality, None)?;
            data.extend_from_slice(tape.value(h).data());
        }
        Ok(Tensor::matrix(items.len(), self.config().d_h, data)?)
    }

    /// ITM match probability for one pair of unit embeddings.
    pub fn discriminate(&self, h_p: &[S], h_s: &[S]) -> Result<S, Error> {
        let w = self.get(ITM_WEIGHT);
        let d = self.config().d_h;
        if h_p.len() != d || h_s.len() != d {
            return Err(Error::Input(format!(
                "embeddings must have width {d}, got {} and {}",
                h_p.len(),
                h_s.len()
            )));
        }
        let w = w.data();
        let mut z = S::zero();
        for k in 0..d {
            let (a, b) = (h_p[k], h_s[k]);
            z += w[k] * a + w[d + k] * b + w[2 * d + k] * (a - b).abs() + w[3 * d + k] * a * b;
        }
        Ok(crate::numerics::sigmoid(z))
    }
}

/// Embeds one item given its records.
pub fn embed<S: Scalar>(
    records: &[crate::featstore::FeatureRecord],
    params: &HadaParams<S>,
    modality: Modality,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Vec<S>, Error> {
    let cfg = params.config();
    let item = ItemFeatures::from_records(records, &cfg.model_ids(), cfg.normalize_globals)?;
    let mut tape = Tape::new();
    let bound = params.params().bind(&mut tape);
    let h = embed_batch(&mut tape, &bound, cfg, &[&item], modality, dropout)?;
    Ok(tape.value(h).data().to_vec())
}

pub fn similarity<S: Scalar>(h_p: &[S], h_s: &[S]) -> S {
    h_p.iter().zip(h_s).map(|(&a, &b)| a * b).sum()
}

/// `(1 − α)·fused + α·anchor`.
pub fn weighted_similarity<S: Scalar>(fused: S, anchor: S, alpha: S) -> S {
    (S::one() - alpha) * fused + alpha * anchor
}
