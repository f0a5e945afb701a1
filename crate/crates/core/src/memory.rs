//! The information memory.
//!
//! A window query `Q = CNN(E)` scores every slot through the key matrix,
//! `W = softmax_columns(Kᵀ Q)`, and fetches `C = Vᵀ W`. The encoder input is
//! `X = [E; C]`: the `n` embedding columns followed by the `n − k + 1`
//! memory columns.

use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub const KEY_NAME: &str = "mem.K";
pub const VALUE_NAME: &str = "mem.V";
pub const KERNEL_NAME: &str = "mem.cnn.kernel";
pub const BIAS_NAME: &str = "mem.cnn.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryParams {
    /// `e × l`
    pub key: ParamId,
    /// `l × e`
    pub value: ParamId,
    /// `e × (e·k)`
    pub kernel: ParamId,
    /// `e`
    pub bias: ParamId,
    pub dim: usize,
    pub window: usize,
    pub slots: usize,
}

/// Intermediate matrices of one memory read.
#[derive(Debug, Clone, Copy)]
pub struct MemoryReadout {
    pub e: NodeId,
    pub q: NodeId,
    pub w: NodeId,
    pub c: NodeId,
    pub x: NodeId,
}

impl MemoryParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        window: usize,
        slots: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || window == 0 || slots == 0 {
            return Err(Error::Config("memory needs e, k, l ≥ 1".into()));
        }
        let key = store.register_uniform(KEY_NAME, &[dim, slots], rng);
        let value = store.register_uniform(VALUE_NAME, &[slots, dim], rng);
        let kernel = store.register_uniform(KERNEL_NAME, &[dim, dim * window], rng);
        let bias = store.register_uniform(BIAS_NAME, &[dim], rng);
        Ok(MemoryParams {
            key,
            value,
            kernel,
            bias,
            dim,
            window,
            slots,
        })
    }

    /// Runs the full read on embedded input `e` (e×n, n ≥ k).
    pub fn read(&self, graph: &mut Graph, store: &ParamStore, e: NodeId) -> Result<MemoryReadout> {
        let kernel = graph.param(store, self.kernel);
        let bias = graph.param(store, self.bias);
        let key = graph.param(store, self.key);
        let value = graph.param(store, self.value);
        let q = query_windows(graph, e, kernel, bias, self.window)?;
        let w = slot_distribution(graph, q, key)?;
        let c = fetch_relevant(graph, w, value)?;
        let x = assemble_encoder_input(graph, e, c)?;
        Ok(MemoryReadout { e, q, w, c, x })
    }
}

/// `E = Emb(G')`: column i is the embedding of token `ids[i]`.
pub fn embed_input(graph: &mut Graph, table: NodeId, ids: &[usize]) -> Result<NodeId> {
    graph.embed(table, ids)
}

/// `Q = CNN(E)`, one column per window of `k` tokens.
pub fn query_windows(graph: &mut Graph, e: NodeId, kernel: NodeId, bias: NodeId, k: usize) -> Result<NodeId> {
    graph.conv1d_windows(e, kernel, bias, k)
}

/// `W = softmax_columns(Kᵀ Q)`; each column is a distribution over slots.
pub fn slot_distribution(graph: &mut Graph, q: NodeId, key: NodeId) -> Result<NodeId> {
    if graph.value(q).rows() != graph.value(key).rows() {
        return Err(Error::ShapeMismatch {
            op: "slot_distribution",
            left: graph.value(q).shape().into(),
            right: graph.value(key).shape().into(),
        });
    }
    let kt = graph.transpose(key);
    let logits = graph.matmul(kt, q)?;
    Ok(graph.softmax_columns(logits))
}

/// `C = Vᵀ W`.
pub fn fetch_relevant(graph: &mut Graph, w: NodeId, value: NodeId) -> Result<NodeId> {
    if graph.value(w).rows() != graph.value(value).rows() {
        return Err(Error::ShapeMismatch {
            op: "fetch_relevant",
            left: graph.value(w).shape().into(),
            right: graph.value(value).shape().into(),
        });
    }
    let vt = graph.transpose(value);
    graph.matmul(vt, w)
}

/// `X = [E; C]`, memory columns after the input columns.
pub fn assemble_encoder_input(graph: &mut Graph, e: NodeId, c: NodeId) -> Result<NodeId> {
    graph.concat_cols(e, c)
}
