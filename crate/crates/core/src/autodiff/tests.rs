use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{all_coordinates, check_coordinates};
use super::*;

fn scalar_gru(store: &mut ParamStore, weight: f64) -> GruParams {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = GruParams::register(store, "g", 1, 1, true, &mut rng);
    for id in [p.w_r, p.v_r, p.w_z, p.v_z, p.w, p.v] {
        store.get_mut(id).data_mut()[0] = weight;
    }
    p
}

fn zero_all(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
}

#[test]
fn gru_zero_weights_halves_state() {
    let mut store = ParamStore::new();
    let p = scalar_gru(&mut store, 0.0);
    let mut tape = Tape::new(&store);
    let x = tape.input_vector(&[3.0]);
    let h = tape.input_vector(&[1.0]);
    let out = gru_step(&mut tape, &p, x, h).unwrap();
    assert!((tape.value(out)[0] - 0.5).abs() < 1e-15);
}

#[test]
fn gru_zero_state_is_fixed_point_of_zero_weights() {
    let mut store = ParamStore::new();
    let p = scalar_gru(&mut store, 0.0);
    let mut tape = Tape::new(&store);
    let x = tape.input_vector(&[-2.0]);
    let h = tape.zeros(1);
    let out = gru_step(&mut tape, &p, x, h).unwrap();
    assert_eq!(tape.value(out), &[0.0]);
}

#[test]
fn gru_scalar_hand_evaluation() {
    // r = z = σ(1.5), c = tanh(1 + 0.5 r), h = (1 - z) 0.5 + z c
    let mut store = ParamStore::new();
    let p = scalar_gru(&mut store, 1.0);
    let mut tape = Tape::new(&store);
    let x = tape.input_vector(&[1.0]);
    let h = tape.input_vector(&[0.5]);
    let out = gru_step(&mut tape, &p, x, h).unwrap();
    assert!((tape.value(out)[0] - 0.816_594_531_856_201_2).abs() < 1e-14);
}

#[test]
fn gru_rejects_wrong_widths() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = GruParams::register(&mut store, "g", 3, 2, true, &mut rng);
    let mut tape = Tape::new(&store);
    let x = tape.input_vector(&[1.0, 2.0]);
    let h = tape.zeros(2);
    assert!(matches!(
        gru_step(&mut tape, &p, x, h),
        Err(AutodiffError::ShapeMismatch { .. })
    ));
}

#[test]
fn mlp_examples() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = MlpParams::register(&mut store, "m", 1, 1, 1, &mut rng);
    zero_all(&mut store);
    {
        let mut tape = Tape::new(&store);
        let x = tape.input_vector(&[0.7]);
        let y = mlp_forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(y), &[0.0]);
    }
    store.get_mut(p.a1).data_mut()[0] = 1.0;
    store.get_mut(p.a2).data_mut()[0] = 1.0;
    let mut tape = Tape::new(&store);
    let x = tape.input_vector(&[0.5]);
    let y = mlp_forward(&mut tape, &p, x).unwrap();
    assert!((tape.value(y)[0] - 0.462_117_157_260_009_74).abs() < 1e-15);
    let bad = tape.input_vector(&[0.5, 0.5]);
    assert!(mlp_forward(&mut tape, &p, bad).is_err());
}

#[test]
fn softmax_examples() {
    assert_eq!(softmax(&[2.0; 4]), vec![0.25; 4]);
    let s = softmax(&[1000.0, 0.0]);
    assert!((s[0] - 1.0).abs() < 1e-12 && s[1] >= 0.0 && s.iter().all(|x| x.is_finite()));
    let s = softmax(&[0.0, 3f64.ln()]);
    assert!((s[0] - 0.25).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15);
}

#[test]
fn cosine_examples() {
    let v = [0.3, -1.2, 4.0];
    assert!((cosine(&v, &v) - 1.0).abs() < 1e-15);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    assert_eq!(cosine(&v, &[0.0; 3]), 0.0);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![1.0, -2.0, 5.0]));
    let mut tape = Tape::new(&store);
    let xv = tape.param(x);
    let s = tape.sum(xv);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_twice_is_an_error_until_reset() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![1.0, 2.0]));
    let mut tape = Tape::new(&store);
    let xv = tape.param(x);
    let s = tape.sum(xv);
    tape.backward(s).unwrap();
    assert_eq!(tape.backward(s).unwrap_err(), AutodiffError::AlreadyBackpropagated);
    tape.reset();
    let xv = tape.param(x);
    let s = tape.sum(xv);
    assert!(tape.backward(s).is_ok());
}

#[test]
fn backward_rejects_vector_root() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![1.0, 2.0]));
    let mut tape = Tape::new(&store);
    let xv = tape.param(x);
    assert!(matches!(tape.backward(xv), Err(AutodiffError::NonScalarRoot(_))));
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Builds a scalar loss touching every differentiable op, checks it against
/// central differences, and returns the worst relative error.
fn op_zoo_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..6);
    let m = rng.random_range(2..6);
    let mut store = ParamStore::new();
    let a = store.add("a", random_vec(&mut rng, n));
    let b = store.add("b", random_vec(&mut rng, n));
    let w = store.add("w", random_mat(&mut rng, m, n));
    let u = store.add("u", random_vec(&mut rng, m));
    let k: f64 = rng.random_range(-2.0..2.0);
    let target: f64 = if rng.random_bool(0.5) { 1.0 } else { 0.3 };

    let build = |tape: &mut Tape<'_>| -> Var {
        let (av, bv, wv, uv) = (tape.param(a), tape.param(b), tape.param(w), tape.param(u));
        let wa = tape.matvec(wv, av);
        let wtu = tape.matvec_t(wv, uv);
        let s = tape.add(wtu, bv);
        let d = tape.sub(s, av);
        let p = tape.mul(d, bv);
        let sg = tape.sigmoid(p);
        let th = tape.tanh(wa);
        let om = tape.one_minus(th);
        let sc = tape.scale(om, k);
        let cat = tape.concat(sg, sc);
        let sm = tape.softmax(cat);
        let c1 = tape.cosine(av, wtu);
        let c2 = tape.dot(sm, cat);
        let items = [av, bv, wtu];
        let wts = tape.stack(&[c1, c2, c1]);
        let wts = tape.softmax(wts);
        let ws = tape.weighted_sum(wts, &items);
        let tot = tape.sum(ws);
        let sum_sc = tape.sum(sc);
        let pl = tape.pair_loss(tot, sum_sc, target, 0.7);
        tape.add_all(&[pl, c1, c2])
    };
    let f = |s: &ParamStore| {
        let mut t = Tape::new(s);
        let l = build(&mut t);
        t.scalar(l)
    };
    let grads = {
        let mut tape = Tape::new(&store);
        let l = build(&mut tape);
        tape.backward(l).unwrap()
    };
    let coords = all_coordinates(&store);
    check_coordinates(&mut store, &grads, &coords, 1e-6, &f).max_relative_error
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..25 {
        let err = op_zoo_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn cosine_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(1..8);
        let mut store = ParamStore::new();
        let x = store.add("x", random_vec(&mut rng, n));
        let y = store.add("y", random_vec(&mut rng, n));
        let f = |s: &ParamStore| cosine(s.get(x).data(), s.get(y).data());
        let grads = {
            let mut tape = Tape::new(&store);
            let (xv, yv) = (tape.param(x), tape.param(y));
            let c = tape.cosine(xv, yv);
            tape.backward(c).unwrap()
        };
        let coords = all_coordinates(&store);
        let r = check_coordinates(&mut store, &grads, &coords, 1e-6, &f);
        assert!(r.max_relative_error < 1e-6, "seed {seed}: {:?}", r);
    }
}

#[test]
fn gru_chain_of_five_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (input, hidden) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut store = ParamStore::new();
        let p = GruParams::register(&mut store, "g", input, hidden, seed % 2 == 0, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, input).into_data()).collect();
        let run = |tape: &mut Tape<'_>| {
            let inputs: Vec<Var> = xs.iter().map(|x| tape.input_vector(x)).collect();
            let states = gru_sequence(tape, &p, &inputs).unwrap();
            let last = *states.last().unwrap();
            let ones = tape.input_vector(&vec![0.5; hidden]);
            tape.dot(last, ones)
        };
        let f = |s: &ParamStore| {
            let mut t = Tape::new(s);
            let l = run(&mut t);
            t.scalar(l)
        };
        let grads = {
            let mut tape = Tape::new(&store);
            let l = run(&mut tape);
            tape.backward(l).unwrap()
        };
        let coords = all_coordinates(&store);
        let r = check_coordinates(&mut store, &grads, &coords, 1e-6, &f);
        assert!(r.max_relative_error < 1e-5, "seed {seed}: {:?}", r);
    }
}

#[test]
fn mlp_jacobian_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (i, h, o) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..4));
        let mut store = ParamStore::new();
        let p = MlpParams::register(&mut store, "m", i, h, o, &mut rng);
        let xid = store.add("x", random_vec(&mut rng, i));
        for out in 0..o {
            let run = |tape: &mut Tape<'_>| {
                let x = tape.param(xid);
                let y = mlp_forward(tape, &p, x).unwrap();
                let mut e = vec![0.0; o];
                e[out] = 1.0;
                let e = tape.input_vector(&e);
                tape.dot(y, e)
            };
            let f = |s: &ParamStore| {
                let mut t = Tape::new(s);
                let l = run(&mut t);
                t.scalar(l)
            };
            let grads = {
                let mut tape = Tape::new(&store);
                let l = run(&mut tape);
                tape.backward(l).unwrap()
            };
            let coords = all_coordinates(&store);
            let r = check_coordinates(&mut store, &grads, &coords, 1e-6, &f);
            assert!(r.max_relative_error < 1e-4, "seed {seed}: {:?}", r);
        }
    }
}

#[test]
fn sgd_and_adam_move_against_the_gradient() {
    for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0, -1.0]));
        let mut opt = Optimizer::new(kind, 0.1, &store);
        let grads = {
            let mut tape = Tape::new(&store);
            let xv = tape.param(x);
            let l = tape.dot(xv, xv);
            tape.backward(l).unwrap()
        };
        opt.apply(&mut store, &grads);
        let v = store.get(x).data();
        assert!(v[0] < 1.0 && v[1] > -1.0, "{kind:?}: {v:?}");
        assert_eq!(opt.step, 1);
    }
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        xs in proptest::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let s = softmax(&xs);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.iter().all(|&p| p > 0.0));
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        for (a, b) in s.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_output_lies_between_previous_state_and_candidate(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, hidden) = (3, 4);
        let mut store = ParamStore::new();
        let p = GruParams::register(&mut store, "g", input, hidden, false, &mut rng);
        let x = random_vec(&mut rng, input).into_data();
        let h0 = random_vec(&mut rng, hidden).into_data();
        let mut tape = Tape::new(&store);
        let xv = tape.input_vector(&x);
        let hv = tape.input_vector(&h0);
        let h1 = gru_step(&mut tape, &p, xv, hv).unwrap();
        let h1 = tape.value(h1).to_vec();
        // recompute the candidate independently: r = σ(W_r x + V_r h), c = tanh(W x + V (r ⊙ h))
        let w = |id: ParamId| store.get(id).data().to_vec();
        let affine = |m: &[f64], cols: usize, v: &[f64], row: usize| -> f64 {
            (0..cols).map(|j| m[row * cols + j] * v[j]).sum()
        };
        for i in 0..hidden {
            let r: Vec<f64> = (0..hidden)
                .map(|k| 1.0 / (1.0 + (-(affine(&w(p.w_r), input, &x, k) + affine(&w(p.v_r), hidden, &h0, k))).exp()))
                .collect();
            let rh: Vec<f64> = r.iter().zip(&h0).map(|(a, b)| a * b).collect();
            let c = (affine(&w(p.w), input, &x, i) + affine(&w(p.v), hidden, &rh, i)).tanh();
            let (lo, hi) = (h0[i].min(c), h0[i].max(c));
            prop_assert!(h1[i] >= lo - 1e-12 && h1[i] <= hi + 1e-12);
        }
    }
}
