//! LSTM encoder over `X`, additive attention, copy-augmented decoder.
//!
//! The decoder's recurrent state starts from the encoder's final state and
//! its first input is `[emb(BOS); z₀]`. Each later input is the embedding of
//! the previous token next to the previous attentional vector `z_{t−1}`.

use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::lstm::{lstm_step, lstm_step_projected, LstmNodes, LstmParams};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::vocab::{BOS, EOS, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    /// `e × e`, applied to `u_t`
    pub attn_w1: ParamId,
    /// `e × e`, applied to `H`
    pub attn_w2: ParamId,
    /// `1 × e`
    pub attn_v: ParamId,
    /// `e × 2e`
    pub attn_w3: ParamId,
    /// `1 × 2e`, applied to `[z_t; u_t]`
    pub copy_w: ParamId,
    pub copy_b: ParamId,
    /// `M_p`, `|V| × e`
    pub out_m: ParamId,
    /// `b_p`, `|V|`
    pub out_b: ParamId,
    pub z0: ParamId,
    pub dim: usize,
    pub vocab_size: usize,
}

/// [`GenParams`] placed on one graph.
#[derive(Debug, Clone, Copy)]
pub struct GenNodes {
    pub encoder: LstmNodes,
    pub decoder: LstmNodes,
    pub attn_w1: NodeId,
    pub attn_w2: NodeId,
    pub attn_v: NodeId,
    pub attn_w3: NodeId,
    pub copy_w: NodeId,
    pub copy_b: NodeId,
    pub out_m: NodeId,
    pub out_b: NodeId,
    pub z0: NodeId,
    pub vocab_size: usize,
}

impl GenParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || vocab_size == 0 {
            return Err(Error::Config("generator needs e ≥ 1 and a non-empty vocabulary".into()));
        }
        let encoder = LstmParams::register(store, "enc.lstm", dim, dim, rng);
        let decoder = LstmParams::register(store, "dec.lstm", 2 * dim, dim, rng);
        Ok(GenParams {
            encoder,
            decoder,
            attn_w1: store.register_uniform("attn.w1", &[dim, dim], rng),
            attn_w2: store.register_uniform("attn.w2", &[dim, dim], rng),
            attn_v: store.register_uniform("attn.v", &[1, dim], rng),
            attn_w3: store.register_uniform("attn.w3", &[dim, 2 * dim], rng),
            copy_w: store.register_uniform("copy.w", &[1, 2 * dim], rng),
            copy_b: store.register_uniform("copy.b", &[1], rng),
            out_m: store.register_uniform("out.M", &[vocab_size, dim], rng),
            out_b: store.register_uniform("out.b", &[vocab_size], rng),
            z0: store.register_uniform("dec.z0", &[dim], rng),
            dim,
            vocab_size,
        })
    }

    pub fn nodes(&self, graph: &mut Graph, store: &ParamStore) -> GenNodes {
        GenNodes {
            encoder: self.encoder.nodes(graph, store),
            decoder: self.decoder.nodes(graph, store),
            attn_w1: graph.param(store, self.attn_w1),
            attn_w2: graph.param(store, self.attn_w2),
            attn_v: graph.param(store, self.attn_v),
            attn_w3: graph.param(store, self.attn_w3),
            copy_w: graph.param(store, self.copy_w),
            copy_b: graph.param(store, self.copy_b),
            out_m: graph.param(store, self.out_m),
            out_b: graph.param(store, self.out_b),
            z0: graph.param(store, self.z0),
            vocab_size: self.vocab_size,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderState {
    /// `H`, `e × width`
    pub h: NodeId,
    pub h_last: NodeId,
    pub c_last: NodeId,
    /// `W₂ H`, shared by every attention step
    pub keys: NodeId,
    pub width: usize,
}

/// Runs the encoder left to right over the columns of `x` from a zero state.
pub fn encode(graph: &mut Graph, p: &GenNodes, x: NodeId) -> Result<EncoderState> {
    let width = graph.value(x).cols();
    let dim = p.encoder.hidden;
    if graph.value(x).rows() != dim {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: graph.value(x).shape().into(),
            right: alloc::vec![dim],
        });
    }
    let projected = graph.matmul(p.encoder.wx, x)?;
    let mut h = graph.constant(Tensor::zeros(&[dim]));
    let mut c = graph.constant(Tensor::zeros(&[dim]));
    let mut hs = Vec::with_capacity(width);
    for j in 0..width {
        let xj = graph.column(projected, j)?;
        (h, c) = lstm_step_projected(graph, &p.encoder, xj, h, c)?;
        hs.push(h);
    }
    let hm = graph.stack_columns(&hs)?;
    let keys = graph.matmul(p.attn_w2, hm)?;
    Ok(EncoderState {
        h: hm,
        h_last: h,
        c_last: c,
        keys,
        width,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    /// `z_t = tanh(W₃ [u_t; context])`
    pub z: NodeId,
    /// `a_t`, a distribution over the columns of `H`
    pub weights: NodeId,
    /// unnormalized scores `s_i`
    pub scores: NodeId,
}

/// `s_i = vᵀ tanh(W₁ u + W₂ H_i)`, `a = softmax(s)`, `z = tanh(W₃ [u; H a])`.
pub fn attend(graph: &mut Graph, p: &GenNodes, u: NodeId, enc: &EncoderState) -> Result<Attention> {
    let query = graph.matmul(p.attn_w1, u)?;
    let pre = graph.add_column(enc.keys, query)?;
    let act = graph.tanh(pre);
    let row = graph.matmul(p.attn_v, act)?;
    let scores = graph.transpose(row);
    let weights = graph.softmax_columns(scores);
    let context = graph.matmul(enc.h, weights)?;
    let joined = graph.concat_rows(u, context)?;
    let mixed = graph.matmul(p.attn_w3, joined)?;
    let z = graph.tanh(mixed);
    Ok(Attention { z, weights, scores })
}

/// Logits `M_p z + b_p`.
pub fn project_vocab(graph: &mut Graph, p: &GenNodes, z: NodeId) -> Result<NodeId> {
    let mz = graph.matmul(p.out_m, z)?;
    graph.add(mz, p.out_b)
}

/// `softmax(M_p z + b_p)`.
pub fn generation_distribution(graph: &mut Graph, p: &GenNodes, z: NodeId) -> Result<NodeId> {
    let logits = project_vocab(graph, p, z)?;
    Ok(graph.softmax_columns(logits))
}

/// Pre-sigmoid copy gate `w·[z; u] + b`.
pub fn copy_gate_logit(graph: &mut Graph, p: &GenNodes, z: NodeId, u: NodeId) -> Result<NodeId> {
    let joined = graph.concat_rows(z, u)?;
    let wz = graph.matmul(p.copy_w, joined)?;
    graph.add(wz, p.copy_b)
}

/// Which columns of `H` may be copied and the extended ids they emit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CopySource {
    pub positions: Vec<usize>,
    pub ids: Vec<usize>,
    /// `|V|` plus the sample's out-of-vocabulary words
    pub extended_len: usize,
}

impl CopySource {
    pub fn none(vocab_size: usize) -> Self {
        CopySource {
            positions: Vec::new(),
            ids: Vec::new(),
            extended_len: vocab_size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: NodeId,
    pub c: NodeId,
    pub z: NodeId,
}

impl DecoderState {
    pub fn initial(p: &GenNodes, enc: &EncoderState) -> Self {
        DecoderState {
            h: enc.h_last,
            c: enc.c_last,
            z: p.z0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub u: NodeId,
    pub attention: Attention,
    pub logits: NodeId,
    /// Absent when nothing is copyable; then `y = softmax(logits)`.
    pub gate_logit: Option<NodeId>,
    /// Attention scores restricted to the copyable positions.
    pub copy_scores: Option<NodeId>,
    /// `y_t` over the extended vocabulary.
    pub y: NodeId,
    pub state: DecoderState,
}

/// `y = g·softmax(logits) + (1−g)·copy`, with `copy` the attention
/// renormalized over copyable positions and scattered onto their ids.
pub fn copy_merge(
    graph: &mut Graph,
    logits: NodeId,
    gate_logit: NodeId,
    copy_scores: NodeId,
    source: &CopySource,
) -> Result<NodeId> {
    let gen = graph.softmax_columns(logits);
    let copy = graph.softmax_columns(copy_scores);
    let gate = graph.sigmoid(gate_logit);
    graph.copy_merge(gen, copy, gate, &source.ids, source.extended_len)
}

/// One decoder step fed with `prev` (an extended id; OOV words enter as UNK).
pub fn decoder_step(
    graph: &mut Graph,
    p: &GenNodes,
    enc: &EncoderState,
    emb: NodeId,
    source: &CopySource,
    state: DecoderState,
    prev: u32,
) -> Result<StepOutput> {
    let fed = if (prev as usize) < p.vocab_size { prev } else { UNK };
    let word = graph.embed(emb, &[fed as usize])?;
    let input = graph.concat_rows(word, state.z)?;
    let (u, c) = lstm_step(graph, &p.decoder, input, state.h, state.c)?;
    let attention = attend(graph, p, u, enc)?;
    let logits = project_vocab(graph, p, attention.z)?;
    let (gate_logit, copy_scores, y) = if source.is_empty() {
        let y = graph.softmax_columns(logits);
        let y = if source.extended_len > p.vocab_size {
            pad_distribution(graph, y, source.extended_len)?
        } else {
            y
        };
        (None, None, y)
    } else {
        let gate = copy_gate_logit(graph, p, attention.z, u)?;
        let scores = graph.gather(attention.scores, &source.positions)?;
        let y = copy_merge(graph, logits, gate, scores, source)?;
        (Some(gate), Some(scores), y)
    };
    Ok(StepOutput {
        u,
        attention,
        logits,
        gate_logit,
        copy_scores,
        y,
        state: DecoderState { h: u, c, z: attention.z },
    })
}

fn pad_distribution(graph: &mut Graph, y: NodeId, len: usize) -> Result<NodeId> {
    let extra = len - graph.value(y).len();
    let zeros = graph.constant(Tensor::zeros(&[extra]));
    graph.concat_rows(y, zeros)
}

/// `−log y_t[target]`, fused so it never evaluates `log 0`.
pub fn step_nll(graph: &mut Graph, step: &StepOutput, source: &CopySource, target: u32) -> Result<NodeId> {
    match (step.gate_logit, step.copy_scores) {
        (Some(gate), Some(scores)) => graph.copy_nll(step.logits, gate, scores, &source.ids, target as usize),
        _ => graph.softmax_nll(step.logits, target as usize),
    }
}

/// `Σ_t −log y_t[s_t]` over aligned steps.
pub fn nll_loss(graph: &mut Graph, steps: &[StepOutput], source: &CopySource, targets: &[u32]) -> Result<NodeId> {
    if steps.len() != targets.len() {
        return Err(Error::Alignment {
            left: steps.len(),
            right: targets.len(),
        });
    }
    let mut terms = Vec::with_capacity(steps.len());
    for (step, &t) in steps.iter().zip(targets) {
        terms.push(step_nll(graph, step, source, t)?);
    }
    graph.add_all(&terms)?.ok_or(Error::EmptyInput)
}

/// How the next decoder input is chosen.
pub enum Feed<'a> {
    /// Gold tokens; one step per token.
    Teacher(&'a [u32]),
    /// Argmax of `y_t`, lowest id on ties.
    Greedy,
    /// A draw from `y_t`.
    Sample(&'a mut dyn rand::RngCore),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_len: usize,
    /// Stop right after emitting EOS (never applies to teacher forcing).
    pub stop_at_eos: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Decoded {
    pub steps: Vec<StepOutput>,
    /// Emitted (or, under teacher forcing, fed) tokens, one per step.
    pub tokens: Vec<u32>,
}

impl Decoded {
    pub fn distributions(&self) -> Vec<NodeId> {
        self.steps.iter().map(|s| s.y).collect()
    }

    pub fn attention(&self) -> Vec<NodeId> {
        self.steps.iter().map(|s| s.attention.weights).collect()
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_index(values: &[f64], rng: &mut dyn rand::RngCore) -> usize {
    let draw: f64 = rng.gen::<f64>() * values.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        if draw < acc {
            return i;
        }
    }
    values.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Unrolls the decoder.
pub fn decode(
    graph: &mut Graph,
    p: &GenNodes,
    enc: &EncoderState,
    emb: NodeId,
    source: &CopySource,
    mut feed: Feed<'_>,
    options: DecodeOptions,
) -> Result<Decoded> {
    if options.max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let steps = match &feed {
        Feed::Teacher(gold) => gold.len(),
        _ => options.max_len,
    };
    let mut out = Decoded::default();
    let mut state = DecoderState::initial(p, enc);
    let mut prev = BOS;
    for t in 0..steps {
        let step = decoder_step(graph, p, enc, emb, source, state, prev)?;
        let token = match &mut feed {
            Feed::Teacher(gold) => gold[t],
            Feed::Greedy => argmax(graph.value(step.y).data()) as u32,
            Feed::Sample(rng) => sample_index(graph.value(step.y).data(), &mut **rng) as u32,
        };
        state = step.state;
        out.steps.push(step);
        out.tokens.push(token);
        prev = token;
        if options.stop_at_eos && token == EOS && !matches!(feed, Feed::Teacher(_)) {
            break;
        }
    }
    Ok(out)
}

/// Entropy (nats) of each `y_t`.
pub fn step_entropies(graph: &Graph, decoded: &Decoded) -> Vec<f64> {
    decoded
        .steps
        .iter()
        .map(|s| math::entropy(graph.value(s.y).data()))
        .collect()
}
