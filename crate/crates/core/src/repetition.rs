//! Content-repetition measures and penalties.
//!
//! [`lrns`] finds the longest repeating non-overlapping substring of a token
//! sequence. The loss builders place the repeating-sentence penalty, the
//! repeating-word penalty, the REINFORCE objective and the coverage penalty on
//! a [`Graph`].

use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two non-overlapping occurrences of the same substring, 1-based:
/// the later one spans `p..=q`, the earlier one starts at `k0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LrnsResult {
    pub p: usize,
    pub q: usize,
    pub k0: usize,
}

impl LrnsResult {
    /// Substring length `q − p + 1`.
    pub fn len(&self) -> usize {
        self.q - self.p + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Longest repeating non-overlapping substring of length ≥ 2.
///
/// Ties are broken by largest `p` (the last occurrence), then smallest `k0`.
/// O(m²) time, O(m) space.
pub fn lrns<T: PartialEq>(tokens: &[T]) -> Option<LrnsResult> {
    let m = tokens.len();
    // prev[i] = common suffix length of tokens[..i] and tokens[..j-1] (1-based ends).
    let mut prev = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    let mut best: Option<LrnsResult> = None;
    for j in 1..=m {
        for i in 1..j {
            cur[i] = if tokens[i - 1] == tokens[j - 1] {
                prev[i - 1] + 1
            } else {
                0
            };
            let len = cur[i].min(j - i);
            if len < 2 {
                continue;
            }
            let cand = LrnsResult {
                p: j - len + 1,
                q: j,
                k0: i - len + 1,
            };
            let better = match best {
                None => true,
                Some(b) => {
                    (cand.len(), cand.p, core::cmp::Reverse(cand.k0))
                        > (b.len(), b.p, core::cmp::Reverse(b.k0))
                }
            };
            if better {
                best = Some(cand);
            }
        }
        cur[j] = 0;
        core::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Variant selector for stage-two training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    None,
    Rsp,
    Rwp,
    Rl,
    Cvg,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::None, Variant::Rsp, Variant::Rwp, Variant::Rl, Variant::Cvg];

    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Rsp => "rsp",
            Variant::Rwp => "rwp",
            Variant::Rl => "rl",
            Variant::Cvg => "cvg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(alloc::format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    /// Weight of the penalty term.
    pub alpha: f64,
    /// Threshold of the repeating-word penalty.
    pub gamma: f64,
    pub variant: Variant,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            alpha: 0.5,
            gamma: 1.0,
            variant: Variant::None,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config("alpha and gamma must be non-negative".into()));
        }
        Ok(())
    }
}

fn zero(graph: &mut Graph) -> NodeId {
    graph.constant(Tensor::scalar(0.0))
}

/// `Σ_{r=p}^{q} y_r[t_r]` over the LRNS span of `tokens` (0 when there is
/// none). `probs[r]` is the distribution that produced `tokens[r]`; the
/// span itself carries no gradient.
pub fn rsp_loss(graph: &mut Graph, probs: &[NodeId], tokens: &[u32]) -> Result<NodeId> {
    if probs.len() != tokens.len() {
        return Err(Error::Alignment {
            left: probs.len(),
            right: tokens.len(),
        });
    }
    let Some(span) = lrns(tokens) else {
        return Ok(zero(graph));
    };
    let mut picked = Vec::with_capacity(span.len());
    for r in span.p - 1..span.q {
        picked.push(graph.pick(probs[r], tokens[r] as usize)?);
    }
    Ok(graph.add_all(&picked)?.expect("span is non-empty"))
}

/// `l_s2s + alpha · penalty`.
pub fn combined_loss(graph: &mut Graph, l_s2s: NodeId, penalty: NodeId, alpha: f64) -> Result<NodeId> {
    let weighted = graph.scale(penalty, alpha);
    graph.add(l_s2s, weighted)
}

/// `1ᵀ max(0, Σ_i y_i − γ·1)`.
pub fn rwp_loss(graph: &mut Graph, probs: &[NodeId], gamma: f64) -> Result<NodeId> {
    let Some(total) = graph.add_all(probs)? else {
        return Ok(zero(graph));
    };
    let shifted = graph.add_scalar(total, -gamma);
    let excess = graph.relu(shifted);
    Ok(graph.sum(excess))
}

/// `(m − q + p) / m` for the LRNS of `tokens`; 1 when nothing repeats.
pub fn rl_reward<T: PartialEq>(tokens: &[T]) -> f64 {
    let m = tokens.len();
    match lrns(tokens) {
        Some(s) if m > 0 => (m - s.q + s.p) as f64 / m as f64,
        _ => 1.0,
    }
}

/// REINFORCE surrogate `R · Σ_i (−log y_i[t_i])`; minimising it ascends
/// `R · Σ log y_i[t_i]`. `step_nll` holds `−log y_i[t_i]` for the sampled
/// tokens. Returns the loss node and the reward.
pub fn rl_loss(graph: &mut Graph, step_nll: &[NodeId], sampled: &[u32]) -> Result<(NodeId, f64)> {
    if step_nll.len() != sampled.len() {
        return Err(Error::Alignment {
            left: step_nll.len(),
            right: sampled.len(),
        });
    }
    let reward = rl_reward(sampled);
    let Some(total) = graph.add_all(step_nll)? else {
        return Ok((zero(graph), reward));
    };
    Ok((graph.scale(total, reward), reward))
}

/// `Σ_t Σ_i min(a_{t,i}, cov_{t,i})` with `cov_t = Σ_{t'<t} a_{t'}`.
pub fn coverage_penalty(graph: &mut Graph, attention: &[NodeId]) -> Result<NodeId> {
    let mut terms = Vec::new();
    let mut coverage: Option<NodeId> = None;
    for &a in attention {
        if let Some(cov) = coverage {
            let m = graph.min(a, cov)?;
            terms.push(graph.sum(m));
            coverage = Some(graph.add(cov, a)?);
        } else {
            coverage = Some(a);
        }
    }
    match graph.add_all(&terms)? {
        Some(total) => Ok(total),
        None => Ok(zero(graph)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Enumerates every (k0, p, q) that satisfies the constraints and keeps
    /// the best under (q − p, p, −k0).
    fn brute_force(s: &[u8]) -> Option<LrnsResult> {
        let m = s.len();
        let mut best: Option<LrnsResult> = None;
        for p in 1..=m {
            for q in p + 1..=m {
                for k0 in 1..=m {
                    if k0 as isize >= 2 * p as isize - q as isize {
                        continue;
                    }
                    if (0..=q - p).all(|r| s[p + r - 1] == s[k0 + r - 1]) {
                        let c = LrnsResult { p, q, k0 };
                        let key = (q - p, p, core::cmp::Reverse(k0));
                        if best.map_or(true, |b| key > (b.q - b.p, b.p, core::cmp::Reverse(b.k0))) {
                            best = Some(c);
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn lrns_examples() {
        assert_eq!(lrns(&['a', 'b', 'c']), None);
        assert_eq!(lrns(&['a', 'b', 'a', 'b']), Some(LrnsResult { p: 3, q: 4, k0: 1 }));
        assert_eq!(lrns::<u8>(&[]), None);
        // single repeated tokens are not substrings of length ≥ 2
        assert_eq!(lrns(&['a', 'a']), None);
        // overlapping "aaa" occurrences cannot count: only "aa"+"aa"
        assert_eq!(lrns(&[1, 1, 1, 1, 1]), Some(LrnsResult { p: 4, q: 5, k0: 1 }));
    }

    #[test]
    fn lrns_matches_brute_force_exhaustively_on_binary_strings() {
        for m in 0..=12usize {
            for bits in 0u32..(1 << m) {
                let s: Vec<u8> = (0..m).map(|i| ((bits >> i) & 1) as u8).collect();
                assert_eq!(lrns(&s), brute_force(&s), "{s:?}");
            }
        }
    }

    #[test]
    fn lrns_matches_brute_force_on_random_ternary_strings() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let m = rng.gen_range(0..=20);
            let s: Vec<u8> = (0..m).map(|_| rng.gen_range(0..3)).collect();
            assert_eq!(lrns(&s), brute_force(&s), "{s:?}");
        }
    }

    fn one_hot(g: &mut Graph, n: usize, hot: usize, p: f64) -> NodeId {
        let mut v = vec![(1.0 - p) / (n - 1) as f64; n];
        v[hot] = p;
        g.constant(Tensor::vector(v))
    }

    #[test]
    fn rsp_examples() {
        let mut g = Graph::new();
        let ys: Vec<NodeId> = [(0, 0.5), (1, 0.5), (2, 0.5)].iter().map(|&(h, p)| one_hot(&mut g, 4, h, p)).collect();
        let l = rsp_loss(&mut g, &ys, &[0, 1, 2]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        // [a, b, a, b] with y_3[a] = 0.9, y_4[b] = 0.8
        let ys: Vec<NodeId> = [(0, 0.6), (1, 0.7), (0, 0.9), (1, 0.8)]
            .iter()
            .map(|&(h, p)| one_hot(&mut g, 4, h, p))
            .collect();
        let l = rsp_loss(&mut g, &ys, &[0, 1, 0, 1]).unwrap();
        assert!((g.value(l).item() - 1.7).abs() < 1e-12);

        let ys: Vec<NodeId> = [0, 1, 2, 0, 1, 2].iter().map(|&h| one_hot(&mut g, 4, h, 1.0)).collect();
        let l = rsp_loss(&mut g, &ys, &[0, 1, 2, 0, 1, 2]).unwrap();
        assert_eq!(g.value(l).item(), 3.0);
    }

    #[test]
    fn rsp_gradient_only_touches_span_probabilities() {
        let mut store = ParamStore::new();
        let ids: Vec<_> = (0..4)
            .map(|i| store.register(&alloc::format!("y{i}"), Tensor::vector(vec![0.3, 0.7])))
            .collect();
        let mut g = Graph::new();
        let ys: Vec<NodeId> = ids.iter().map(|&id| g.param(&store, id)).collect();
        let l = rsp_loss(&mut g, &ys, &[0, 1, 0, 1]).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(ys[0]), None);
        assert_eq!(grads.get(ys[2]).unwrap(), &[1.0, 0.0]);
        assert_eq!(grads.get(ys[3]).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn combined_loss_examples() {
        let mut g = Graph::new();
        let s2s = g.constant(Tensor::scalar(2.0));
        let rsp = g.constant(Tensor::scalar(1.7));
        let l = combined_loss(&mut g, s2s, rsp, 0.5).unwrap();
        assert!((g.value(l).item() - 2.85).abs() < 1e-12);
        let l = combined_loss(&mut g, s2s, rsp, 0.0).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
    }

    #[test]
    fn rwp_examples() {
        let mut g = Graph::new();
        let y = one_hot(&mut g, 3, 0, 1.0);
        let l = rwp_loss(&mut g, &[y], 1.0).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let l = rwp_loss(&mut g, &[y, y], 1.5).unwrap();
        assert!((g.value(l).item() - 0.5).abs() < 1e-12);
        let soft = one_hot(&mut g, 3, 1, 0.4);
        let l = rwp_loss(&mut g, &[y, soft, y], 0.0).unwrap();
        assert!((g.value(l).item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rl_examples() {
        assert_eq!(rl_reward(&['a', 'b', 'c']), 1.0);
        assert_eq!(rl_reward(&['a', 'b', 'a', 'b']), 0.75);
        assert!(rl_reward(&['a', 'b', 'c', 'd']) > rl_reward(&['a', 'b', 'a', 'b']));

        let mut g = Graph::new();
        let nll: Vec<NodeId> = (1..=4).map(|i| g.constant(Tensor::scalar(i as f64))).collect();
        let (l, r) = rl_loss(&mut g, &nll, &[0, 1, 0, 1]).unwrap();
        assert_eq!(r, 0.75);
        assert!((g.value(l).item() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn coverage_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let b = g.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let single = coverage_penalty(&mut g, &[a]).unwrap();
        assert_eq!(g.value(single).item(), 0.0);
        let same = coverage_penalty(&mut g, &[a, a]).unwrap();
        assert_eq!(g.value(same).item(), 1.0);
        let disjoint = coverage_penalty(&mut g, &[a, b]).unwrap();
        assert_eq!(g.value(disjoint).item(), 0.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("beam").is_err());
    }

    proptest! {
        #[test]
        fn lrns_occurrences_never_overlap(s in prop::collection::vec(0u8..3, 0..40)) {
            if let Some(r) = lrns(&s) {
                prop_assert!(r.k0 >= 1 && r.p < r.q && r.q <= s.len());
                prop_assert!(r.k0 + (r.q - r.p) < r.p);
                prop_assert_eq!(&s[r.p - 1..r.q], &s[r.k0 - 1..r.k0 - 1 + r.len()]);
            }
        }

        #[test]
        fn penalties_stay_in_range(
            s in prop::collection::vec(0u32..3, 1..16),
            gamma1 in 0.0f64..3.0,
            gamma2 in 0.0f64..3.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let ys: Vec<NodeId> = s.iter().map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
                let total: f64 = raw.iter().sum();
                g.constant(Tensor::vector(raw.into_iter().map(|x| x / total).collect()))
            }).collect();
            let rsp = rsp_loss(&mut g, &ys, &s).unwrap();
            let span = lrns(&s).map_or(0, |r| r.len()) as f64;
            prop_assert!(g.value(rsp).item() >= 0.0 && g.value(rsp).item() <= span + 1e-12);
            let (lo, hi) = if gamma1 <= gamma2 { (gamma1, gamma2) } else { (gamma2, gamma1) };
            let at_lo = rwp_loss(&mut g, &ys, lo).unwrap();
            let at_hi = rwp_loss(&mut g, &ys, hi).unwrap();
            prop_assert!(g.value(at_hi).item() >= 0.0);
            prop_assert!(g.value(at_hi).item() <= g.value(at_lo).item() + 1e-12);
            let r = rl_reward(&s);
            prop_assert!(r > 0.0 && r <= 1.0);
        }
    }
}
