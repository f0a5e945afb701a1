use super::*;
use crate::params::ParamStore;
use alloc::vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(out ⊙ weights)` so that every output element carries a distinct
/// upstream gradient.
fn weighted_sum(g: &mut Graph, out: NodeId, weights: &Tensor) -> Result<NodeId> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(2));
    let m = g.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let out = g.matmul(i, m).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
    let b = g.constant(Tensor::from_rows(&[&[3.0], &[4.0]]));
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[11.0]);

    let err = g.matmul(a, a).unwrap_err();
    assert_eq!(
        err,
        Error::ShapeMismatch {
            op: "matmul",
            left: vec![1, 2],
            right: vec![1, 2]
        }
    );
}

#[test]
fn matmul_gradients_random_3x4_4x2() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let a = store.register("a", random(&mut rng, &[3, 4]));
    let b = store.register("b", random(&mut rng, &[4, 2]));
    let weights = random(&mut rng, &[3, 2]);
    let check = finite_difference_check(&mut store, 1e-5, None, |s, g| {
        let (na, nb) = (g.param(s, a), g.param(s, b));
        let out = g.matmul(na, nb)?;
        weighted_sum(g, out, &weights)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-6, "{check:?}");
}

#[test]
fn softmax_columns_examples() {
    let uniform = softmax_columns(&Tensor::vector(vec![0.0, 0.0, 0.0]));
    for v in uniform.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let big = softmax_columns(&Tensor::vector(vec![1000.0, 1000.0, 1000.0]));
    for v in big.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let closed = softmax_columns(&Tensor::vector(vec![0.0, libm::log(3.0)]));
    assert!((closed.data()[0] - 0.25).abs() < 1e-15);
    assert!((closed.data()[1] - 0.75).abs() < 1e-15);
}

#[test]
fn conv1d_examples() {
    let mut g = Graph::new();
    let input = g.constant(Tensor::from_rows(&[&[5.0, 7.0]]));
    let kernel = g.constant(Tensor::from_rows(&[&[1.0]]));
    let bias = g.constant(Tensor::vector(vec![0.0]));
    let out = g.conv1d_windows(input, kernel, bias, 1).unwrap();
    assert_eq!(g.value(out).data(), &[5.0, 7.0]);

    let input = g.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0]]));
    let kernel = g.constant(Tensor::from_rows(&[&[1.0, 1.0]]));
    let out = g.conv1d_windows(input, kernel, bias, 2).unwrap();
    assert_eq!(g.value(out).data(), &[3.0, 5.0]);
    assert_eq!(g.value(out).cols(), 2);

    let short = g.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
    let kernel3 = g.constant(Tensor::from_rows(&[&[1.0, 1.0, 1.0]]));
    assert_eq!(
        g.conv1d_windows(short, kernel3, bias, 3).unwrap_err(),
        Error::InputTooShort { len: 2, window: 3 }
    );
}

#[test]
fn conv1d_matches_naive_window_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (e, n, k) = (4, 6, 3);
    let input = random(&mut rng, &[e, n]);
    let kernel = random(&mut rng, &[e, e * k]);
    let bias = random(&mut rng, &[e]);
    let mut g = Graph::new();
    let (ni, nk, nb) = (
        g.constant(input.clone()),
        g.constant(kernel.clone()),
        g.constant(bias.clone()),
    );
    let out = g.conv1d_windows(ni, nk, nb, k).unwrap();
    let out = g.value(out);
    assert_eq!(out.shape(), &[e, n - k + 1]);
    for j in 0..n - k + 1 {
        // vec(window) stacks columns j..j+k
        let window: Vec<f64> = (0..k).flat_map(|c| input.column(j + c)).collect();
        for o in 0..e {
            let dot: f64 = (0..e * k).map(|t| kernel.get(o, t) * window[t]).sum();
            assert!((out.get(o, j) - (dot + bias.data()[o])).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let p = store.register("p", Tensor::vector(vec![1.0, -2.0, 3.5]));
    let mut g = Graph::new();
    let np = g.param(&store, p);
    let loss = g.sum(np);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(np).unwrap(), &[1.0, 1.0, 1.0]);

    let mut store = ParamStore::new();
    let p = store.register("p", Tensor::scalar(5.0));
    let mut g = Graph::new();
    let np = g.param(&store, p);
    let d = g.add_scalar(np, -3.0);
    let sq = g.mul(d, d).unwrap();
    let grads = g.backward(sq).unwrap();
    assert_eq!(grads.get(np).unwrap(), &[4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let v = g.constant(Tensor::vector(vec![1.0, 2.0]));
    assert_eq!(g.backward(v).unwrap_err(), Error::NotScalar(vec![2]));
}

#[test]
fn unreachable_parameters_keep_zero_gradient() {
    let mut store = ParamStore::new();
    let used = store.register("used", Tensor::vector(vec![2.0]));
    let unused = store.register("unused", Tensor::vector(vec![9.0]));
    let mut g = Graph::new();
    let nu = g.param(&store, used);
    let loss = g.sum(nu);
    store.zero_grad();
    g.backward(loss).unwrap().accumulate_into(&mut store, 1.0);
    assert_eq!(store.grad(used).data(), &[1.0]);
    assert_eq!(store.grad(unused).data(), &[0.0]);
}

#[test]
fn fd_check_on_square() {
    let mut store = ParamStore::new();
    let p = store.register("p", Tensor::scalar(1.0));
    let check = finite_difference_check(&mut store, 1e-5, None, |s, g| {
        let np = g.param(s, p);
        let sq = g.mul(np, np)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-9, "{check:?}");
    assert_eq!(store.value(p).data(), &[1.0]);
}

fn wrong_tanh_backward(_input: &Tensor, _output: &Tensor, g: &[f64], acc: &mut [f64]) {
    // claims d tanh(x)/dx = 1
    for (d, s) in acc.iter_mut().zip(g) {
        *d += s;
    }
}

#[test]
fn fd_check_detects_corrupted_rule() {
    let mut store = ParamStore::new();
    let p = store.register("p", Tensor::vector(vec![0.8, -1.3, 2.0]));
    let check = finite_difference_check(&mut store, 1e-5, None, |s, g| {
        let np = g.param(s, p);
        let out = Tensor::vector(g.value(np).data().iter().map(|&x| libm::tanh(x)).collect());
        let t = g.custom(np, out, wrong_tanh_backward);
        Ok(g.sum(t))
    })
    .unwrap();
    assert!(check.max_rel_error > 1e-2, "{check:?}");
}

#[test]
fn fd_check_rejects_nondeterministic_function() {
    let mut store = ParamStore::new();
    let p = store.register("p", Tensor::scalar(1.0));
    let mut calls = 0.0;
    let err = finite_difference_check(&mut store, 1e-5, None, |s, g| {
        calls += 1.0;
        let np = g.param(s, p);
        Ok(g.add_scalar(np, calls))
    })
    .unwrap_err();
    assert!(matches!(err, Error::NonDeterministic { .. }));
}

/// Builds one random instance of primitive `which` and returns the max
/// relative error of its gradients.
fn primitive_instance(which: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let r = rng.gen_range(2..5);
    let c = rng.gen_range(2..5);
    let a = store.register("a", random(&mut rng, &[r, c]));
    let b = store.register("b", random(&mut rng, &[r, c]));
    let bt = store.register("bt", random(&mut rng, &[c, r]));
    let v = store.register("v", random(&mut rng, &[r]));
    let k = 2.min(c);
    let kernel = store.register("kernel", random(&mut rng, &[r, r * k]));
    let gate = store.register("gate", random(&mut rng, &[1]));
    let table = store.register("table", random(&mut rng, &[6, r]));
    let ids: Vec<usize> = (0..c).map(|_| rng.gen_range(0..6)).collect();
    let weights = random(&mut rng, &[64, 64]);
    let target = rng.gen_range(0..r * c);
    let check = finite_difference_check(&mut store, 1e-5, None, |s, g| {
        let (na, nb, nbt, nv) = (g.param(s, a), g.param(s, b), g.param(s, bt), g.param(s, v));
        let out = match which {
            0 => g.matmul(na, nbt)?,
            1 => g.softmax_columns(na),
            2 => {
                let nk = g.param(s, kernel);
                g.conv1d_windows(na, nk, nv, k)?
            }
            3 => g.tanh(na),
            4 => g.sigmoid(na),
            5 => g.mul(na, nb)?,
            6 => g.add_column(na, nv)?,
            7 => {
                let nt = g.param(s, table);
                g.embed(nt, &ids)?
            }
            8 => g.concat_cols(na, nb)?,
            9 => {
                let t = g.transpose(na);
                g.concat_rows(t, nbt)?
            }
            10 => {
                let flat = g.gather(na, &[0, target, 1])?;
                let sm = g.softmax_columns(flat);
                let nt = g.param(s, table);
                let col = g.column(nt, 1)?;
                let head = g.slice_rows(col, 0, 2)?;
                let head = g.concat_rows(head, sm)?;
                head
            }
            11 => {
                let logits = g.column(na, 0)?;
                let scores = g.column(nb, 1)?;
                let ng = g.param(s, gate);
                let source: Vec<usize> = (0..r).map(|i| (i * 7 + 1) % (r + 1)).collect();
                return g.copy_nll(logits, ng, scores, &source, target % (r + 1));
            }
            12 => {
                let logits = g.column(na, 0)?;
                return g.softmax_nll(logits, target % r);
            }
            13 => {
                let logits = g.column(na, 0)?;
                let gen = g.softmax_columns(logits);
                let scores = g.column(nb, 1)?;
                let copy = g.softmax_columns(scores);
                let ng = g.param(s, gate);
                let gs = g.sigmoid(ng);
                let source: Vec<usize> = (0..r).map(|i| (i * 3 + 2) % (r + 2)).collect();
                g.copy_merge(gen, copy, gs, &source, r + 2)?
            }
            16 => {
                let c0 = g.column(na, 0)?;
                let c1 = g.column(nb, 1)?;
                g.stack_columns(&[c1, c0, c1])?
            }
            14 => {
                let t = g.tanh(na);
                g.min(t, nb)?
            }
            _ => {
                let d = g.sub(na, nb)?;
                let d = g.scale(d, 1.7);
                g.relu(d)
            }
        };
        let shape = g.value(out).shape().to_vec();
        let n: usize = shape.iter().product();
        let w = Tensor::new(&shape, weights.data()[..n].to_vec())?;
        weighted_sum(g, out, &w)
    })
    .unwrap();
    check.max_rel_error
}

#[test]
fn every_primitive_matches_finite_differences_on_100_instances() {
    for which in 0..17 {
        for seed in 0..100 {
            let err = primitive_instance(which, 1000 * which as u64 + seed);
            assert!(err < 1e-4, "primitive {which} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn softmax_columns_always_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let r = rng.gen_range(1..8);
        let c = rng.gen_range(1..8);
        let mut m = random(&mut rng, &[r, c]);
        m.data_mut().iter_mut().for_each(|v| *v *= 50.0);
        let s = softmax_columns(&m);
        for j in 0..c {
            let total: f64 = s.column(j).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn backward_is_repeatable_after_reset() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let a = store.register("a", random(&mut rng, &[3, 3]));
    let b = store.register("b", random(&mut rng, &[3, 2]));
    let run = |store: &mut ParamStore| {
        store.zero_grad();
        let mut g = Graph::new();
        let (na, nb) = (g.param(store, a), g.param(store, b));
        let m = g.matmul(na, nb).unwrap();
        let t = g.tanh(m);
        let s = g.softmax_columns(t);
        let loss = g.sum(s);
        let sq = g.mul(loss, loss).unwrap();
        g.backward(sq).unwrap().accumulate_into(store, 1.0);
        store.clone()
    };
    let first = run(&mut store);
    let second = run(&mut store);
    for id in first.ids() {
        let x: Vec<u64> = first.grad(id).data().iter().map(|v| v.to_bits()).collect();
        let y: Vec<u64> = second.grad(id).data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(x, y);
    }
}

#[test]
fn outputs_stay_finite_for_finite_inputs() {
    let mut g = Graph::new();
    let big = g.constant(Tensor::vector(vec![800.0, -800.0, 0.0]));
    let s = g.softmax_columns(big);
    let t = g.tanh(big);
    let sg = g.sigmoid(big);
    let nll = g.softmax_nll(big, 1).unwrap();
    let gate = g.constant(Tensor::scalar(-900.0));
    let cn = g.copy_nll(big, gate, big, &[0, 1, 2], 1).unwrap();
    for n in [s, t, sg, nll, cn] {
        assert!(g.value(n).is_finite());
    }
    assert!((g.value(nll).item() - 1600.0).abs() < 1e-9);
}
