//! Multi-head GATv2 over the fusion graph.
//!
//! Weights are stored input-major (`d × d'`) so node rows multiply on the
//! left: `x · W1` is the row form of `W1 x`.

use rand::Rng;

use crate::graph::{EdgeIndex, FusionGraph};
use crate::numerics::{Tape, Tensor, Var};
use crate::{Error, Scalar};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct GatHead<S> {
    pub w1: Tensor<S>,
    pub w2: Tensor<S>,
    /// `d' × 1`.
    pub attn: Tensor<S>,
}

impl<S: Scalar> GatHead<S> {
    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_head(&self) -> usize {
        self.w1.cols()
    }

    fn check(&self) -> Result<(), Error> {
        let (d, dh) = (self.d_in(), self.d_head());
        if self.w2.shape() != [d, dh] || self.attn.shape() != [dh, 1] {
            return Err(Error::Config(format!(
                "GAT head shapes disagree: w1 {:?}, w2 {:?}, attn {:?}",
                self.w1.shape(),
                self.w2.shape(),
                self.attn.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer<S> {
    pub heads: Vec<GatHead<S>>,
    /// `(H·d') × d_out`.
    pub out_w: Tensor<S>,
    /// `1 × d_out`.
    pub out_b: Tensor<S>,
    pub leaky_slope: S,
}

/// Uniform in `±1/√fan_in`.
pub(crate) fn init_uniform<S: Scalar>(
    rng: &mut impl Rng,
    fan_in: usize,
    rows: usize,
    cols: usize,
) -> Tensor<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| S::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

impl<S: Scalar> GatLayer<S> {
    /// Random layer with `d' = d_out / heads`.
    pub fn init(
        rng: &mut impl Rng,
        d_in: usize,
        d_out: usize,
        heads: usize,
    ) -> Result<Self, Error> {
        let dh = head_width(d_out, heads)?;
        let heads = (0..heads)
            .map(|_| GatHead {
                w1: init_uniform(rng, d_in, d_in, dh),
                w2: init_uniform(rng, d_in, d_in, dh),
                attn: init_uniform(rng, dh, dh, 1),
            })
            .collect::<Vec<_>>();
        let out_w = init_uniform(rng, heads.len() * dh, heads.len() * dh, d_out);
        Ok(Self {
            heads,
            out_w,
            out_b: Tensor::zeros(&[1, d_out]),
            leaky_slope: S::lit(DEFAULT_LEAKY_SLOPE),
        })
    }

    pub fn d_out(&self) -> usize {
        self.out_w.cols()
    }
}

pub(crate) fn head_width(d_out: usize, heads: usize) -> Result<usize, Error> {
    if heads == 0 || d_out == 0 || !d_out.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "d_out {d_out} must be a positive multiple of the head count {heads}"
        )));
    }
    Ok(d_out / heads)
}

/// Tape handles for one head.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w1: Var,
    pub w2: Var,
    pub attn: Var,
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub heads: Vec<HeadVars>,
    pub out_w: Var,
    pub out_b: Var,
}

/// Intermediate values of one head.
#[derive(Clone, Copy, Debug)]
pub struct HeadTrace {
    /// Projected source rows `x · W1` per edge, `E × d'`.
    pub messages: Var,
    /// `E × 1`.
    pub scores: Var,
    /// `E × 1`, softmax per destination.
    pub alpha: Var,
    /// Updated CLS rows, `C × d'` in `EdgeIndex::cls` order.
    pub updated: Var,
}

pub fn head_forward<S: Scalar>(
    tape: &mut Tape<S>,
    head: HeadVars,
    nodes: Var,
    edges: &EdgeIndex,
    slope: S,
) -> Result<HeadTrace, Error> {
    let d = tape.value(nodes).cols();
    if tape.value(head.w1).rows() != d {
        return Err(Error::Config(format!(
            "node width {d} does not match GAT input width {}",
            tape.value(head.w1).rows()
        )));
    }
    let z1 = tape.matmul(nodes, head.w1)?;
    let z2 = tape.matmul(nodes, head.w2)?;
    let messages = tape.gather_rows(z1, edges.src.clone())?;
    let at_dst = tape.gather_rows(z2, edges.dst.clone())?;
    let pre = tape.add(messages, at_dst)?;
    let act = tape.leaky_relu(pre, slope);
    let scores = tape.matmul(act, head.attn)?;
    let alpha = tape.segment_softmax(scores, edges.segment.clone(), edges.num_segments())?;
    let weighted = tape.row_scale(messages, alpha)?;
    let summed = tape.segment_sum(weighted, edges.segment.clone(), edges.num_segments())?;
    let updated = tape.elu(summed);
    Ok(HeadTrace {
        messages,
        scores,
        alpha,
        updated,
    })
}

/// All heads, concatenated, then the output affine: `C × d_out`.
pub fn layer_forward<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &LayerVars,
    nodes: Var,
    edges: &EdgeIndex,
    slope: S,
) -> Result<Var, Error> {
    let mut outs = Vec::with_capacity(layer.heads.len());
    for &h in &layer.heads {
        outs.push(head_forward(tape, h, nodes, edges, slope)?.updated);
    }
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    Ok(tape.affine(cat, layer.out_w, layer.out_b)?)
}

fn bind_head<S: Scalar>(tape: &mut Tape<S>, head: &GatHead<S>) -> Result<HeadVars, Error> {
    head.check()?;
    Ok(HeadVars {
        w1: tape.constant(head.w1.clone()),
        w2: tape.constant(head.w2.clone()),
        attn: tape.constant(head.attn.clone()),
    })
}

fn run_head<S: Scalar>(
    head: &GatHead<S>,
    graph: &FusionGraph<S>,
    slope: S,
) -> Result<(Tape<S>, HeadTrace), Error> {
    let mut tape = Tape::new();
    let vars = bind_head(&mut tape, head)?;
    let nodes = tape.constant(graph.nodes.clone());
    let trace = head_forward(&mut tape, vars, nodes, &graph.layout.edge_index(), slope)?;
    Ok((tape, trace))
}

/// Raw attention score of every edge, in `graph.layout.edges` order.
pub fn edge_scores<S: Scalar>(
    head: &GatHead<S>,
    graph: &FusionGraph<S>,
    slope: S,
) -> Result<Vec<S>, Error> {
    let (tape, t) = run_head(head, graph, slope)?;
    Ok(tape.value(t.scores).data().to_vec())
}

/// Softmax of `scores` over the incoming edges of each CLS node.
pub fn attention_normalize<S: Scalar>(
    scores: &[S],
    graph: &FusionGraph<S>,
) -> Result<Vec<S>, Error> {
    let edges = graph.layout.edge_index();
    let t = crate::numerics::segment_softmax_values(
        &Tensor::column(scores.to_vec()),
        &edges.segment,
        edges.num_segments(),
    )?;
    Ok(t.into_data())
}

/// `ELU(Σ α · x W1)` for every CLS node, `C × d'`.
pub fn node_update<S: Scalar>(
    head: &GatHead<S>,
    alpha: &[S],
    graph: &FusionGraph<S>,
) -> Result<Tensor<S>, Error> {
    head.check()?;
    let edges = graph.layout.edge_index();
    if alpha.len() != edges.src.len() {
        return Err(Error::Graph(format!(
            "{} attention weights for {} edges",
            alpha.len(),
            edges.src.len()
        )));
    }
    let mut tape = Tape::new();
    let nodes = tape.constant(graph.nodes.clone());
    let w1 = tape.constant(head.w1.clone());
    let a = tape.constant(Tensor::column(alpha.to_vec()));
    let z1 = tape.matmul(nodes, w1)?;
    let msg = tape.gather_rows(z1, edges.src.clone())?;
    let weighted = tape.row_scale(msg, a)?;
    let summed = tape.segment_sum(weighted, edges.segment.clone(), edges.num_segments())?;
    let out = tape.elu(summed);
    Ok(tape.value(out).clone())
}

/// Layer output for every CLS node, `C × d_out`, rows in `layout.cls` order
/// (item-major, then model).
pub fn multi_head_forward<S: Scalar>(
    layer: &GatLayer<S>,
    graph: &FusionGraph<S>,
) -> Result<Tensor<S>, Error> {
    let mut tape = Tape::new();
    let heads = layer
        .heads
        .iter()
        .map(|h| bind_head(&mut tape, h))
        .collect::<Result<Vec<_>, _>>()?;
    let vars = LayerVars {
        heads,
        out_w: tape.constant(layer.out_w.clone()),
        out_b: tape.constant(layer.out_b.clone()),
    };
    let nodes = tape.constant(graph.nodes.clone());
    let out = layer_forward(
        &mut tape,
        &vars,
        nodes,
        &graph.layout.edge_index(),
        layer.leaky_slope,
    )?;
    Ok(tape.value(out).clone())
}
