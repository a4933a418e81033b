//! Token projection and the token → CLS fusion graph.
//!
//! Per item, the nodes are the projected token rows of every upstream model
//! (CLS first within each model's block). Every node gets one directed edge
//! into every model's CLS node, its own CLS included, so CLS nodes are the
//! only destinations and each has in-degree equal to the item's node count.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::featstore::{FeatureRecord, Modality};
use crate::numerics::Tensor;
use crate::{Error, Scalar};

/// Affine map `x · weight + bias` with `weight: d_in × d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<S> {
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> Affine<S> {
    pub fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>, Error> {
        let mut y = x.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            let n = y.cols();
            for (k, v) in y.data_mut().iter_mut().enumerate() {
                *v += b.data()[k % n];
            }
        }
        Ok(y)
    }
}

/// One token projection per (model, modality) into the shared node space.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProjectionParams<S> {
    pub maps: BTreeMap<(String, Modality), Affine<S>>,
}

/// Maps every token row of `record` into the shared space; row 0 stays the
/// CLS slot.
pub fn project_tokens<S: Scalar>(
    record: &FeatureRecord,
    params: &ProjectionParams<S>,
) -> Result<Tensor<S>, Error> {
    let map = params
        .maps
        .get(&(record.model_id.clone(), record.modality))
        .ok_or_else(|| {
            Error::Config(format!(
                "no projection for model {:?} ({})",
                record.model_id, record.modality
            ))
        })?;
    if map.weight.rows() != record.d_tok() {
        return Err(Error::Config(format!(
            "projection for {:?} expects d_tok {}, record has {}",
            record.model_id,
            map.weight.rows(),
            record.d_tok()
        )));
    }
    map.apply(&record.tokens.cast())
}

/// Node and edge structure of one item graph or a disjoint batch of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphLayout {
    pub model_ids: Vec<String>,
    pub num_nodes: usize,
    /// `(src, dst)` pairs, grouped by destination.
    pub edges: Vec<(usize, usize)>,
    /// CLS node of each (item, model), item-major.
    pub cls: Vec<usize>,
    /// First node of each item, plus a final entry equal to `num_nodes`.
    pub item_offsets: Vec<usize>,
}

impl GraphLayout {
    /// Layout of one item whose model `i` contributes `rows[i]` nodes
    /// (CLS plus patches).
    pub fn for_item(model_ids: &[String], rows: &[usize]) -> Result<Self, Error> {
        if model_ids.is_empty() || model_ids.len() != rows.len() {
            return Err(Error::Graph(
                "a fusion graph needs at least one model".into(),
            ));
        }
        if let Some(i) = rows.iter().position(|&r| r == 0) {
            return Err(Error::Graph(format!(
                "model {:?} contributes no CLS node",
                model_ids[i]
            )));
        }
        let mut cls = Vec::with_capacity(rows.len());
        let mut offset = 0;
        for &r in rows {
            cls.push(offset);
            offset += r;
        }
        let num_nodes = offset;
        let mut edges = Vec::with_capacity(num_nodes * cls.len());
        for &dst in &cls {
            edges.extend((0..num_nodes).map(|src| (src, dst)));
        }
        Ok(Self {
            model_ids: model_ids.to_vec(),
            num_nodes,
            edges,
            cls,
            item_offsets: vec![0, num_nodes],
        })
    }

    /// Disjoint union with node indices offset per item.
    pub fn batch(layouts: &[GraphLayout]) -> Result<Self, Error> {
        let first = layouts
            .first()
            .ok_or_else(|| Error::Graph("cannot batch zero graphs".into()))?;
        let mut out = GraphLayout {
            model_ids: first.model_ids.clone(),
            num_nodes: 0,
            edges: Vec::new(),
            cls: Vec::new(),
            item_offsets: vec![0],
        };
        for l in layouts {
            if l.model_ids != out.model_ids {
                return Err(Error::Graph(
                    "batched graphs must share their model list".into(),
                ));
            }
            let base = out.num_nodes;
            out.edges
                .extend(l.edges.iter().map(|&(s, d)| (s + base, d + base)));
            out.cls.extend(l.cls.iter().map(|&c| c + base));
            out.item_offsets
                .extend(l.item_offsets[1..].iter().map(|&o| o + base));
            out.num_nodes += l.num_nodes;
        }
        Ok(out)
    }

    pub fn num_items(&self) -> usize {
        self.item_offsets.len() - 1
    }

    pub fn num_models(&self) -> usize {
        self.model_ids.len()
    }

    /// Edge arrays in the form the attention layer consumes.
    pub fn edge_index(&self) -> EdgeIndex {
        let slot: BTreeMap<usize, usize> =
            self.cls.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        EdgeIndex {
            src: self.edges.iter().map(|e| e.0).collect(),
            dst: self.edges.iter().map(|e| e.1).collect(),
            segment: self.edges.iter().map(|e| slot[&e.1]).collect(),
            cls: self.cls.iter().copied().collect(),
        }
    }
}

/// Source node, destination node and destination CLS slot of every edge.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    /// Index into `cls` of each edge's destination.
    pub segment: Rc<[usize]>,
    pub cls: Rc<[usize]>,
}

impl EdgeIndex {
    pub fn num_segments(&self) -> usize {
        self.cls.len()
    }
}

/// Nodes plus layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionGraph<S> {
    pub nodes: Tensor<S>,
    pub layout: GraphLayout,
}

/// Builds one item's graph from its projected token matrices, in model order.
pub fn build_graph<S: Scalar>(projected: &[(String, Tensor<S>)]) -> Result<FusionGraph<S>, Error> {
    let first = projected
        .first()
        .ok_or_else(|| Error::Graph("a fusion graph needs at least one model".into()))?;
    let d = first.1.cols();
    let mut data = Vec::new();
    let mut rows = Vec::with_capacity(projected.len());
    for (id, m) in projected {
        if m.cols() != d {
            return Err(Error::Graph(format!(
                "model {id:?} projects to width {}, expected {d}",
                m.cols()
            )));
        }
        rows.push(m.rows());
        data.extend_from_slice(m.data());
    }
    let ids: Vec<String> = projected.iter().map(|(id, _)| id.clone()).collect();
    let layout = GraphLayout::for_item(&ids, &rows)?;
    Ok(FusionGraph {
        nodes: Tensor::matrix(layout.num_nodes, d, data)?,
        layout,
    })
}

pub fn batch_graphs<S: Scalar>(graphs: &[FusionGraph<S>]) -> Result<FusionGraph<S>, Error> {
    let layouts: Vec<GraphLayout> = graphs.iter().map(|g| g.layout.clone()).collect();
    let layout = GraphLayout::batch(&layouts)?;
    let d = graphs[0].nodes.cols();
    let mut data = Vec::with_capacity(layout.num_nodes * d);
    for g in graphs {
        if g.nodes.cols() != d {
            return Err(Error::Graph(
                "batched graphs must share the node width".into(),
            ));
        }
        data.extend_from_slice(g.nodes.data());
    }
    Ok(FusionGraph {
        nodes: Tensor::matrix(layout.num_nodes, d, data)?,
        layout,
    })
}
