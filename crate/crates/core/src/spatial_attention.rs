//! Two graph-transformer convolution layers with multi-head neighbor
//! attention, ReLU and dropout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net_sim::AdjacencyMatrix;
use crate::numcore::{NeighborIndex, NodeId, ParamStore, Tape, Tensor};
use crate::Mode;

/// Per head `Wq`, `Wk`, `Wv` (`H2 x D_in`), skip `W0` (`H2 x D_in`) and head
/// merge `WE` (`H2 x E*H2`).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayerWeights {
    pub query: Vec<Tensor>,
    pub key: Vec<Tensor>,
    pub value: Vec<Tensor>,
    pub skip: Tensor,
    pub merge: Tensor,
}

impl AttentionLayerWeights {
    pub fn zeros(heads: usize, hidden: usize, input_width: usize) -> Self {
        let m = || Tensor::zeros(&[hidden, input_width]);
        Self {
            query: (0..heads).map(|_| m()).collect(),
            key: (0..heads).map(|_| m()).collect(),
            value: (0..heads).map(|_| m()).collect(),
            skip: m(),
            merge: Tensor::zeros(&[hidden, heads * hidden]),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per matrix.
    pub fn init<R: Rng + ?Sized>(heads: usize, hidden: usize, input_width: usize, rng: &mut R) -> Self {
        let mut draw = |r: usize, c: usize| {
            let bound = 1.0 / (c as f64).sqrt();
            Tensor::from_fn(r, c, |_, _| rng.gen_range(-bound..=bound))
        };
        let mut per_head = || (0..heads).map(|_| draw(hidden, input_width)).collect::<Vec<_>>();
        let query = per_head();
        let key = per_head();
        let value = per_head();
        Self { query, key, value, skip: draw(hidden, input_width), merge: draw(hidden, heads * hidden) }
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }

    pub fn hidden(&self) -> usize {
        self.skip.rows()
    }

    pub fn input_width(&self) -> usize {
        self.skip.cols()
    }

    /// Registers under `{prefix}.head{e}.{Wq,Wk,Wv}` (heads counted from 1)
    /// and `{prefix}.{W0,WE}`.
    pub fn register(&self, prefix: &str, store: &mut ParamStore) {
        for e in 0..self.heads() {
            store.insert(format!("{prefix}.head{}.Wq", e + 1), self.query[e].clone());
            store.insert(format!("{prefix}.head{}.Wk", e + 1), self.key[e].clone());
            store.insert(format!("{prefix}.head{}.Wv", e + 1), self.value[e].clone());
        }
        store.insert(format!("{prefix}.W0"), self.skip.clone());
        store.insert(format!("{prefix}.WE"), self.merge.clone());
    }

    pub(crate) fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> AttentionNodes {
        let mut leaf_all = |ts: &'a [Tensor]| ts.iter().map(|t| tape.leaf_ref(t)).collect::<Vec<_>>();
        let query = leaf_all(&self.query);
        let key = leaf_all(&self.key);
        let value = leaf_all(&self.value);
        AttentionNodes {
            query,
            key,
            value,
            skip: tape.leaf_ref(&self.skip),
            merge: tape.leaf_ref(&self.merge),
            hidden: self.hidden(),
        }
    }
}

/// Layer weights bound on a tape.
#[derive(Clone, Debug)]
pub(crate) struct AttentionNodes {
    pub query: Vec<NodeId>,
    pub key: Vec<NodeId>,
    pub value: Vec<NodeId>,
    pub skip: NodeId,
    pub merge: NodeId,
    pub hidden: usize,
}

/// Incoming neighbor lists of `A`, self excluded.
pub fn neighbor_index(adjacency: &AdjacencyMatrix) -> NeighborIndex {
    NeighborIndex::from_lists(&adjacency.neighbor_lists())
}

/// Attention weights per head on the edges of a neighbor index.
#[derive(Clone, Debug)]
pub struct AttentionCoefficients {
    pub index: NeighborIndex,
    /// `per_head[e][edge]`, edges in the index's order.
    pub per_head: Vec<Vec<f64>>,
}

impl AttentionCoefficients {
    /// `(j, beta_ij)` over the neighbors of `i` for head `e`.
    pub fn row(&self, head: usize, i: usize) -> Vec<(usize, f64)> {
        self.index
            .segment(i)
            .map(|e| (self.index.neighbors(i)[e - self.index.segment(i).start], self.per_head[head][e]))
            .collect()
    }
}

/// Softmax-normalized attention weights of head `e`, one per edge.
fn head_coefficients<'a>(
    tape: &mut Tape<'a>,
    gin: NodeId,
    w: &AttentionNodes,
    e: usize,
    index: &'a NeighborIndex,
) -> Result<NodeId> {
    let q = tape.matmul_t(gin, w.query[e], false, true)?;
    let k = tape.matmul_t(gin, w.key[e], false, true)?;
    let scores = tape.edge_scores(q, k, index, 1.0 / (w.hidden as f64).sqrt())?;
    tape.segment_softmax(scores, index)
}

pub(crate) fn transformer_conv_tape<'a>(
    tape: &mut Tape<'a>,
    gin: NodeId,
    w: &AttentionNodes,
    index: &'a NeighborIndex,
) -> Result<NodeId> {
    let mut heads = Vec::with_capacity(w.query.len());
    for e in 0..w.query.len() {
        let beta = head_coefficients(tape, gin, w, e, index)?;
        let v = tape.matmul_t(gin, w.value[e], false, true)?;
        heads.push(tape.edge_aggregate(beta, v, index)?);
    }
    let merged = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let attended = tape.matmul_t(merged, w.merge, false, true)?;
    let skip = tape.matmul_t(gin, w.skip, false, true)?;
    tape.add(skip, attended)
}

/// ReLU then (train mode only) inverted dropout.
pub(crate) fn activate_tape<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    x: NodeId,
    mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> NodeId {
    let r = tape.relu(x);
    if mode == Mode::Eval || dropout <= 0.0 {
        return r;
    }
    let keep = 1.0 - dropout;
    let shape = tape.value(r).shape().to_vec();
    let mut mask = Tensor::zeros(&shape);
    for m in mask.data_mut() {
        if rng.gen::<f64>() < keep {
            *m = 1.0 / keep;
        }
    }
    let mask = tape.leaf(mask);
    tape.mul(r, mask).expect("mask shaped like its input")
}

fn check_width(gin: &Tensor, w: &AttentionLayerWeights, adjacency: &AdjacencyMatrix) -> Result<()> {
    if gin.cols() != w.input_width() || gin.rows() != adjacency.node_count() {
        return Err(Error::ShapeMismatch {
            op: "transformer_conv input",
            left: gin.shape().to_vec(),
            right: vec![adjacency.node_count(), w.input_width()],
        });
    }
    Ok(())
}

/// `beta^e_ij = softmax_{j in N(i)} (Q_i . K_j / sqrt(H2))` for every head.
pub fn attention_coefficients(
    gin: &Tensor,
    adjacency: &AdjacencyMatrix,
    w: &AttentionLayerWeights,
) -> Result<AttentionCoefficients> {
    check_width(gin, w, adjacency)?;
    let index = neighbor_index(adjacency);
    let per_head = {
        let mut tape = Tape::new();
        let nodes = w.bind(&mut tape);
        let g = tape.leaf_ref(gin);
        let mut out = Vec::new();
        for e in 0..w.heads() {
            let beta = head_coefficients(&mut tape, g, &nodes, e, &index)?;
            out.push(tape.value(beta).data().to_vec());
        }
        out
    };
    Ok(AttentionCoefficients { index, per_head })
}

/// `g'_i = W0 g_i + WE [concat_e sum_{j in N(i)} beta^e_ij V^e_j]`; isolated
/// nodes keep only the skip term.
pub fn transformer_conv(gin: &Tensor, adjacency: &AdjacencyMatrix, w: &AttentionLayerWeights) -> Result<Tensor> {
    check_width(gin, w, adjacency)?;
    let index = neighbor_index(adjacency);
    let mut tape = Tape::new();
    let nodes = w.bind(&mut tape);
    let g = tape.leaf_ref(gin);
    let out = transformer_conv_tape(&mut tape, g, &nodes, &index)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialOutput {
    /// Layer 1 after ReLU and dropout.
    pub first: Tensor,
    /// Layer 2 after ReLU (and dropout when enabled).
    pub second: Tensor,
}

/// Dropout placement for the two layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub probability: f64,
    pub after_second_layer: bool,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn spatial_tape<'a, R: Rng + ?Sized>(
    tape: &mut Tape<'a>,
    g: NodeId,
    index: &'a NeighborIndex,
    layer1: &AttentionNodes,
    layer2: &AttentionNodes,
    mode: Mode,
    dropout: DropoutSpec,
    rng: &mut R,
) -> Result<(NodeId, NodeId)> {
    let l1 = transformer_conv_tape(tape, g, layer1, index)?;
    let first = activate_tape(tape, l1, mode, dropout.probability, rng);
    let l2 = transformer_conv_tape(tape, first, layer2, index)?;
    let p2 = if dropout.after_second_layer { dropout.probability } else { 0.0 };
    let second = activate_tape(tape, l2, mode, p2, rng);
    Ok((first, second))
}

pub fn spatial_forward<R: Rng + ?Sized>(
    g: &Tensor,
    adjacency: &AdjacencyMatrix,
    layer1: &AttentionLayerWeights,
    layer2: &AttentionLayerWeights,
    mode: Mode,
    dropout: DropoutSpec,
    rng: &mut R,
) -> Result<SpatialOutput> {
    check_width(g, layer1, adjacency)?;
    if layer2.input_width() != layer1.hidden() {
        return Err(Error::ShapeMismatch {
            op: "spatial layer widths",
            left: vec![layer1.hidden()],
            right: vec![layer2.input_width()],
        });
    }
    let index = neighbor_index(adjacency);
    let mut tape = Tape::new();
    let n1 = layer1.bind(&mut tape);
    let n2 = layer2.bind(&mut tape);
    let gin = tape.leaf_ref(g);
    let (first, second) = spatial_tape(&mut tape, gin, &index, &n1, &n2, mode, dropout, rng)?;
    Ok(SpatialOutput { first: tape.value(first).clone(), second: tape.value(second).clone() })
}
