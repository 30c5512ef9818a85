//! Multi-relational graph convolution: k layers of a simplified
//! composition-based GCN producing node embeddings.
//!
//! One layer updates every node as
//!
//! ```text
//! h'_v = relu( W_self·h_v + W_adj · Σ_{(v,r,v')∈E} cmp(h_r, h_{v'}) )
//! h'_r = W_rel·h_r
//! ```
//!
//! where `cmp` composes a relation embedding with a neighbor embedding
//! (elementwise multiply or add). The sum runs over the node's *outgoing*
//! edges, so information flows backward along edges, from tail into head;
//! the optional bidirectional mode adds an independently parameterized sum
//! over incoming edges. The edge sum is realized as a gather over a flat
//! edge list followed by a scatter-add into head rows, which keeps the
//! whole layer inside the autodiff op set.
//!
//! All weights act by right-multiplication on row-vector embeddings, so a
//! `d×d` parameter here is the transpose of the conventional left-acting
//! matrix; the distinction is internal and consistent throughout.

use crate::autodiff::{Result as AdResult, Tape, ValueId};
use crate::data::KnowledgeGraph;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    Multiply,
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    Backward,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborNorm {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub layers: usize,
    pub composition: Composition,
    pub flow: Flow,
    pub neighbor_norm: NeighborNorm,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layers: 1,
            composition: Composition::Multiply,
            flow: Flow::Backward,
            neighbor_norm: NeighborNorm::Sum,
        }
    }
}

/// Flat edge-list view of a graph, precomputed once per dataset: parallel
/// head/relation/tail index arrays plus degree counts for mean
/// normalization.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub node_count: usize,
    pub heads: Vec<usize>,
    pub rels: Vec<usize>,
    pub tails: Vec<usize>,
    pub out_degree: Vec<usize>,
    pub in_degree: Vec<usize>,
}

impl EdgeIndex {
    pub fn from_graph(graph: &KnowledgeGraph) -> Self {
        EdgeIndex::from_edges(graph.node_count(), graph.edges())
    }

    pub fn from_edges(node_count: usize, edges: &[(usize, usize, usize)]) -> Self {
        let mut heads = Vec::with_capacity(edges.len());
        let mut rels = Vec::with_capacity(edges.len());
        let mut tails = Vec::with_capacity(edges.len());
        let mut out_degree = vec![0usize; node_count];
        let mut in_degree = vec![0usize; node_count];
        for &(h, r, t) in edges {
            heads.push(h);
            rels.push(r);
            tails.push(t);
            out_degree[h] += 1;
            in_degree[t] += 1;
        }
        EdgeIndex {
            node_count,
            heads,
            rels,
            tails,
            out_degree,
            in_degree,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.heads.len()
    }
}

/// Tape handles for one layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct GnnLayerIds {
    pub w_self: ValueId,
    pub w_adj: ValueId,
    /// Present only in bidirectional flow.
    pub w_adj_fwd: Option<ValueId>,
    pub w_rel: ValueId,
}

/// Tape handles for the whole encoder: embedding tables plus per-layer
/// weights.
#[derive(Debug, Clone)]
pub struct GnnIds {
    pub node_table: ValueId,
    pub relation_table: ValueId,
    pub layers: Vec<GnnLayerIds>,
}

/// Composes a relation embedding with a neighbor embedding (row-aligned
/// matrices compose elementwise in bulk).
pub fn compose(tape: &mut Tape, h_r: ValueId, h_v: ValueId, mode: Composition) -> AdResult<ValueId> {
    match mode {
        Composition::Multiply => tape.hadamard(h_r, h_v),
        Composition::Add => tape.add(h_r, h_v),
    }
}

/// 1/degree per node, broadcast to `d` columns, for mean normalization.
/// Zero-degree nodes divide by 1 (their sum is exactly zero anyway).
fn inverse_degree_matrix(degree: &[usize], d: usize) -> Tensor {
    Tensor::from_fn(degree.len(), d, |r, _| 1.0 / degree[r].max(1) as f64)
}

/// Gather–compose–scatter for one flow direction: each edge contributes
/// cmp(h_rel, h_src) into its destination node's sum.
#[allow(clippy::too_many_arguments)]
fn aggregate_direction(
    tape: &mut Tape,
    h: ValueId,
    r: ValueId,
    src: &[usize],
    rels: &[usize],
    dst: &[usize],
    node_count: usize,
    composition: Composition,
    inv_degree: Option<ValueId>,
) -> AdResult<ValueId> {
    let rel_rows = tape.gather_rows(r, rels)?;
    let src_rows = tape.gather_rows(h, src)?;
    let composed = compose(tape, rel_rows, src_rows, composition)?;
    let mut summed = tape.scatter_add_rows(node_count, dst, composed)?;
    if let Some(inv) = inv_degree {
        summed = tape.hadamard(summed, inv)?;
    }
    Ok(summed)
}

/// One graph-convolution layer over the full node and relation tables.
pub fn layer_forward(
    tape: &mut Tape,
    index: &EdgeIndex,
    h: ValueId,
    r: ValueId,
    layer: &GnnLayerIds,
    config: &GnnConfig,
) -> AdResult<(ValueId, ValueId)> {
    let h_self = tape.matmul(h, layer.w_self)?;
    let inv_out = match config.neighbor_norm {
        NeighborNorm::Sum => None,
        NeighborNorm::Mean => {
            let d = tape.value(h).cols();
            Some(tape.constant(inverse_degree_matrix(&index.out_degree, d))?)
        }
    };
    let backward_sum = aggregate_direction(
        tape,
        h,
        r,
        &index.tails,
        &index.rels,
        &index.heads,
        index.node_count,
        config.composition,
        inv_out,
    )?;
    let h_adj = tape.matmul(backward_sum, layer.w_adj)?;
    let mut pre = tape.add(h_self, h_adj)?;
    if config.flow == Flow::Bidirectional {
        let w_fwd = layer
            .w_adj_fwd
            .expect("bidirectional layer carries forward weights");
        let inv_in = match config.neighbor_norm {
            NeighborNorm::Sum => None,
            NeighborNorm::Mean => {
                let d = tape.value(h).cols();
                Some(tape.constant(inverse_degree_matrix(&index.in_degree, d))?)
            }
        };
        let forward_sum = aggregate_direction(
            tape,
            h,
            r,
            &index.heads,
            &index.rels,
            &index.tails,
            index.node_count,
            config.composition,
            inv_in,
        )?;
        let h_fwd = tape.matmul(forward_sum, w_fwd)?;
        pre = tape.add(pre, h_fwd)?;
    }
    let h_next = tape.relu(pre)?;
    let r_next = tape.matmul(r, layer.w_rel)?;
    Ok((h_next, r_next))
}

/// Runs all `config.layers` layers and returns the final node embeddings
/// (and relation embeddings). `after_layer` is called on each layer's node
/// output — the trainer hooks dropout in here; pass [`no_hook`] otherwise.
/// With zero layers the tables are returned untouched.
pub fn encode_with<F>(
    tape: &mut Tape,
    index: &EdgeIndex,
    ids: &GnnIds,
    config: &GnnConfig,
    mut after_layer: F,
) -> AdResult<(ValueId, ValueId)>
where
    F: FnMut(&mut Tape, ValueId, usize) -> AdResult<ValueId>,
{
    let mut h = ids.node_table;
    let mut r = ids.relation_table;
    for (i, layer) in ids.layers.iter().enumerate().take(config.layers) {
        let (h_next, r_next) = layer_forward(tape, index, h, r, layer, config)?;
        h = after_layer(tape, h_next, i)?;
        r = r_next;
    }
    Ok((h, r))
}

/// Identity layer hook for inference and tests.
pub fn no_hook(_tape: &mut Tape, h: ValueId, _layer: usize) -> AdResult<ValueId> {
    Ok(h)
}
