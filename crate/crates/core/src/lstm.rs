//! Single LSTM cell built from tape primitives.
//!
//! Gate layout in the stacked `4e` rows: input, forget, candidate, output.

use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    /// `4e × d_in`
    pub wx: ParamId,
    /// `4e × e`
    pub wh: ParamId,
    /// `4e`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

/// The cell's parameters placed on a particular graph.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub wx: NodeId,
    pub wh: NodeId,
    pub bias: NodeId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.register_uniform(&alloc::format!("{prefix}.wx"), &[4 * hidden, input_dim], rng);
        let wh = store.register_uniform(&alloc::format!("{prefix}.wh"), &[4 * hidden, hidden], rng);
        let bias = store.register_uniform(&alloc::format!("{prefix}.b"), &[4 * hidden], rng);
        LstmParams {
            wx,
            wh,
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn nodes(&self, graph: &mut Graph, store: &ParamStore) -> LstmNodes {
        LstmNodes {
            wx: graph.param(store, self.wx),
            wh: graph.param(store, self.wh),
            bias: graph.param(store, self.bias),
            hidden: self.hidden,
        }
    }
}

/// One step: returns `(h, c)`.
pub fn lstm_step(
    graph: &mut Graph,
    cell: &LstmNodes,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let projected = graph.matmul(cell.wx, x)?;
    lstm_step_projected(graph, cell, projected, h_prev, c_prev)
}

/// Same as [`lstm_step`] with `wx · x` already computed (the encoder projects
/// all input columns with one matmul).
pub fn lstm_step_projected(
    graph: &mut Graph,
    cell: &LstmNodes,
    x_projected: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let e = cell.hidden;
    let recurrent = graph.matmul(cell.wh, h_prev)?;
    let pre = graph.add(x_projected, recurrent)?;
    let pre = graph.add(pre, cell.bias)?;
    let i = graph.slice_rows(pre, 0, e)?;
    let f = graph.slice_rows(pre, e, e)?;
    let g = graph.slice_rows(pre, 2 * e, e)?;
    let o = graph.slice_rows(pre, 3 * e, e)?;
    let i = graph.sigmoid(i);
    let f = graph.sigmoid(f);
    let g = graph.tanh(g);
    let o = graph.sigmoid(o);
    let keep = graph.mul(f, c_prev)?;
    let write = graph.mul(i, g)?;
    let c = graph.add(keep, write)?;
    let squashed = graph.tanh(c);
    let h = graph.mul(o, squashed)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_difference_check;
    use crate::tensor::Tensor;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vector_of(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Tensor {
        Tensor::vector((0..n).map(|_| rng.gen_range(-scale..scale)).collect())
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let mut store = ParamStore::new();
        let p = LstmParams::register(&mut store, "cell", 3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        for id in [p.wx, p.wh, p.bias] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let nodes = p.nodes(&mut g, &store);
        let x = g.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let h0 = g.constant(Tensor::zeros(&[4]));
        let c0 = g.constant(Tensor::zeros(&[4]));
        let (h, c) = lstm_step(&mut g, &nodes, x, h0, c0).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cell_state_grows_by_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let p = LstmParams::register(&mut store, "cell", 4, 4, &mut rng);
        for id in [p.wx, p.wh, p.bias] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= 30.0);
        }
        let bound = 5.0;
        for _ in 0..50 {
            let mut g = Graph::new();
            let nodes = p.nodes(&mut g, &store);
            let x = g.constant(vector_of(&mut rng, 4, 3.0));
            let h0 = g.constant(vector_of(&mut rng, 4, 1.0));
            let c0 = g.constant(vector_of(&mut rng, 4, bound));
            let (_, c) = lstm_step(&mut g, &nodes, x, h0, c0).unwrap();
            assert!(g.value(c).data().iter().all(|v| v.abs() <= bound + 1.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let p = LstmParams::register(&mut store, "cell", 4, 4, &mut rng);
        for id in [p.wx, p.wh, p.bias] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= 5.0);
        }
        let x = store.register("x", vector_of(&mut rng, 4, 1.0));
        let h0 = store.register("h0", vector_of(&mut rng, 4, 1.0));
        let c0 = store.register("c0", vector_of(&mut rng, 4, 1.0));
        let weights_h = vector_of(&mut rng, 4, 1.0);
        let weights_c = vector_of(&mut rng, 4, 1.0);
        let check = finite_difference_check(&mut store, 1e-5, None, |s, g| {
            let nodes = p.nodes(g, s);
            let (xn, hn, cn) = (g.param(s, x), g.param(s, h0), g.param(s, c0));
            let (h, c) = lstm_step(g, &nodes, xn, hn, cn)?;
            let wh = g.constant(weights_h.clone());
            let wc = g.constant(weights_c.clone());
            let a = g.mul(h, wh)?;
            let b = g.mul(c, wc)?;
            let t = g.add(a, b)?;
            Ok(g.sum(t))
        })
        .unwrap();
        assert!(check.max_rel_error < 1e-6, "{check:?}");
    }
}
