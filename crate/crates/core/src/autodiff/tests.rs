use std::rc::Rc;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::{stream, Domain, StreamRng};

type Op = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>;

fn random(shape: &[usize], rng: &mut StreamRng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Max relative error of `sum(op(inputs) * R)` over every input coordinate.
fn check_op(shapes: &[&[usize]], range: (f64, f64), op: &Op) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = stream(seed, Domain::Test, 17);
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.add(&format!("x{i}"), random(s, &mut rng, range.0, range.1)).unwrap())
            .collect();
        let probe_shape = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(&store, id)).collect();
            let y = op(&mut tape, &vars).unwrap();
            tape.shape(y).to_vec()
        };
        let weights = random(&probe_shape, &mut rng, -1.0, 1.0);
        let f = |tape: &mut Tape<f64>, store: &ParamStore<f64>| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let y = op(tape, &vars)?;
            let w = tape.leaf(weights.clone());
            let p = tape.mul(y, w)?;
            tape.sum(p)
        };
        let report = grad_check(&mut store, f, 1e-5, usize::MAX, 1e-6, &mut rng).unwrap();
        worst = worst.max(report.max_rel_error);
    }
    worst
}

macro_rules! primitive_grad {
    ($name:ident, $shapes:expr, $range:expr, $op:expr) => {
        #[test]
        fn $name() {
            let err = check_op($shapes, $range, &$op);
            assert!(err <= 1e-6, "relative error {err}");
        }
    };
}

primitive_grad!(grad_matmul, &[&[3, 4], &[4, 2]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.matmul(v[0], v[1]));
primitive_grad!(grad_batch_matmul, &[&[3, 2, 4], &[3, 4, 5]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.batch_matmul(v[0], v[1]));
primitive_grad!(grad_add, &[&[2, 3], &[2, 3]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.add(v[0], v[1]));
primitive_grad!(grad_sub, &[&[2, 3], &[2, 3]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.sub(v[0], v[1]));
primitive_grad!(grad_mul, &[&[2, 3], &[2, 3]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.mul(v[0], v[1]));
primitive_grad!(grad_add_row, &[&[3, 4], &[4]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.add_row(v[0], v[1]));
primitive_grad!(grad_mul_scalar, &[&[3, 2], &[1]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.mul_scalar(v[0], v[1]));
primitive_grad!(grad_exp, &[&[2, 3]], (-2.0, 2.0), |t: &mut Tape<f64>, v: &[Var]| t.exp(v[0]));
primitive_grad!(grad_log, &[&[2, 3]], (0.5, 3.0), |t: &mut Tape<f64>, v: &[Var]| t.log(v[0]));
primitive_grad!(grad_sigmoid, &[&[2, 3]], (-3.0, 3.0), |t: &mut Tape<f64>, v: &[Var]| t.sigmoid(v[0]));
primitive_grad!(grad_tanh, &[&[2, 3]], (-2.0, 2.0), |t: &mut Tape<f64>, v: &[Var]| t.tanh(v[0]));
primitive_grad!(grad_relu, &[&[3, 3]], (0.1, 1.0), |t: &mut Tape<f64>, v: &[Var]| {
    // keep away from the kink: shift half the entries negative
    let s = t.leaf(Tensor::from_fn(&[3, 3], |i| if i % 2 == 0 { -1.2 } else { 0.0 }));
    let x = t.add(v[0], s)?;
    t.relu(x)
});
primitive_grad!(grad_softmax, &[&[3, 4]], (-2.0, 2.0), |t: &mut Tape<f64>, v: &[Var]| t.softmax(v[0]));
primitive_grad!(grad_masked_softmax, &[&[3, 4]], (-2.0, 2.0), |t: &mut Tape<f64>, v: &[Var]| {
    let keep: Vec<bool> = (0..12).map(|i| i % 4 != 2 && i < 8).collect();
    t.masked_softmax(v[0], &keep)
});
primitive_grad!(grad_log_softmax, &[&[3, 2]], (-3.0, 3.0), |t: &mut Tape<f64>, v: &[Var]| t.log_softmax(v[0]));
primitive_grad!(grad_concat, &[&[2, 3], &[2, 1]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.concat(&[v[0], v[1], v[0]]));
primitive_grad!(grad_stack, &[&[2, 3], &[2, 3]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.stack(&[v[0], v[1]]));
primitive_grad!(grad_mean_axis, &[&[2, 3, 4]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.mean_axis(v[0], 1));
primitive_grad!(grad_masked_mean, &[&[4, 3]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| {
    t.masked_mean_axis(v[0], 0, &[true, false, true, true])
});
primitive_grad!(grad_slice, &[&[4, 3]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.slice(v[0], 1, 2));
primitive_grad!(grad_slice_last, &[&[4, 5]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.slice_last(v[0], 1, 3));
primitive_grad!(grad_transpose, &[&[2, 5]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.transpose(v[0]));
primitive_grad!(grad_normalize_rows, &[&[3, 4]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.normalize_rows(v[0], 1e-12));
primitive_grad!(grad_conv1d, &[&[7, 3], &[3, 3, 2]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| t.causal_conv1d(v[0], v[1], 2));
primitive_grad!(grad_gru_cell, &[&[1, 3], &[1, 4], &[3, 12], &[4, 12], &[12], &[12]], (-1.0, 1.0), |t: &mut Tape<f64>, v: &[Var]| {
    // hand-wired GRU so that every weight is an input of the checked op
    let gi = t.matmul(v[0], v[2])?;
    let gi = t.add_row(gi, v[4])?;
    let gh = t.matmul(v[1], v[3])?;
    let gh = t.add_row(gh, v[5])?;
    let (ir, iz, inn) = (t.slice_last(gi, 0, 4)?, t.slice_last(gi, 4, 4)?, t.slice_last(gi, 8, 4)?);
    let (hr, hz, hn) = (t.slice_last(gh, 0, 4)?, t.slice_last(gh, 4, 4)?, t.slice_last(gh, 8, 4)?);
    let r = t.add(ir, hr)?;
    let r = t.sigmoid(r)?;
    let z = t.add(iz, hz)?;
    let z = t.sigmoid(z)?;
    let rn = t.mul(r, hn)?;
    let n = t.add(inn, rn)?;
    let n = t.tanh(n)?;
    let d = t.sub(v[1], n)?;
    let zd = t.mul(z, d)?;
    t.add(n, zd)
});
primitive_grad!(grad_cross_entropy, &[&[4, 2]], (-3.0, 3.0), |t: &mut Tape<f64>, v: &[Var]| t.cross_entropy_rows(v[0], &[0, 1, 1, 0]));

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::filled(&[2, 5], 3.0));
    let y = t.softmax(x).unwrap();
    assert!(t.value(y).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn relu_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64(&[3], &[-2.0, 0.0, 1.5]).unwrap());
    let y = t.relu(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 1.5]);
}

#[test]
fn gru_zero_weights_keep_zero_state() {
    let mut store = ParamStore::<f64>::new();
    let gru = Gru::new(&mut store, "gru", 3, 4, &mut stream(0, Domain::Test, 0)).unwrap();
    store.iter_mut().for_each(|p| p.value = Tensor::zeros(p.value.shape()));
    let mut t = Tape::new();
    let mut bind = Binder::new(&store);
    let x = t.leaf(Tensor::zeros(&[1, 3]));
    let h = t.leaf(Tensor::zeros(&[1, 4]));
    let h2 = gru.cell(&mut t, &mut bind, x, h).unwrap();
    assert!(t.value(h2).data().iter().all(|&v| v == 0.0));
}

#[test]
fn cross_entropy_hand_values() {
    assert!((cross_entropy_logits(&[0.3f64, 0.3], 1) - std::f64::consts::LN_2).abs() < 1e-15);
    let tiny = cross_entropy_logits(&[10.0f64, -10.0], 0);
    assert!((tiny - 2.061_153_6e-9).abs() < 1e-15, "{tiny}");
    let mut t = Tape::<f64>::new();
    let l = t.leaf(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 10.0, -10.0]).unwrap());
    let ce = t.cross_entropy_rows(l, &[1, 0]).unwrap();
    assert!((t.value(ce).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((t.value(ce).data()[1] - tiny).abs() < 1e-20);
}

proptest! {
    #[test]
    fn cross_entropy_nonnegative(a in -50.0..50.0f64, b in -50.0..50.0f64, label in 0usize..2) {
        prop_assert!(cross_entropy_logits(&[a, b], label) >= 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one(v in proptest::collection::vec(-30.0..30.0f64, 12)) {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(&[3, 4], v).unwrap());
        let y = t.softmax(x).unwrap();
        for row in t.value(y).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }
}

#[test]
fn backward_of_sum_is_ones_and_square_is_doubled() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", Tensor::from_f64(&[2, 2], &[1.0, -2.0, 0.5, 4.0]).unwrap()).unwrap();
    let q = store.add("q", Tensor::scalar(3.0)).unwrap();
    let mut t = Tape::new();
    let pv = t.param(&store, p);
    let s = t.sum(pv).unwrap();
    t.backward(s).unwrap().accumulate_into(&mut store);
    assert_eq!(store.get(p).grad.data(), &[1.0; 4]);
    let mut t = Tape::new();
    let qv = t.param(&store, q);
    let sq = t.mul(qv, qv).unwrap();
    t.backward(sq).unwrap().accumulate_into(&mut store);
    assert_eq!(store.get(q).grad.item(), 6.0);
}

#[test]
fn backward_errors() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::zeros(&[2]));
    assert!(matches!(t.backward(x), Err(TensorError::NonScalarRoot(_))));
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(TensorError::BackwardTwice)));
    t.reset();
    let y = t.leaf(Tensor::scalar(1.0));
    assert!(t.backward(y).is_ok());
    let mut t = Tape::<f64>::new();
    let neg = t.leaf(Tensor::scalar(-1.0));
    assert!(matches!(t.log(neg), Err(TensorError::Domain { .. })));
    let a = t.leaf(Tensor::zeros(&[2, 3]));
    assert!(matches!(t.matmul(a, a), Err(TensorError::Shape { .. })));
}

#[test]
fn conv_is_causal() {
    let mut rng = stream(3, Domain::Test, 0);
    let x = random(&[9, 2], &mut rng, -1.0, 1.0);
    let w = random(&[3, 2, 2], &mut rng, -1.0, 1.0);
    let run = |x: &Tensor<f64>| {
        let mut t = Tape::new();
        let (xv, wv) = (t.leaf(x.clone()), t.leaf(w.clone()));
        let y = t.causal_conv1d(xv, wv, 2).unwrap();
        t.value(y).clone()
    };
    let base = run(&x);
    for step in 0..9 {
        let mut p = x.clone();
        p.data_mut()[step * 2] += 0.7;
        let out = run(&p);
        assert_eq!(&out.data()[..step * 2], &base.data()[..step * 2]);
        assert_ne!(out.data()[step * 2..], base.data()[step * 2..]);
    }
}

#[test]
fn grad_check_linear_and_sigmoid_chain() {
    let mut rng = stream(5, Domain::Test, 0);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&[3, 3], &mut rng, -1.0, 1.0)).unwrap();
    let x = random(&[3, 2], &mut rng, -1.0, 1.0);
    let linear = |t: &mut Tape<f64>, s: &ParamStore<f64>| {
        let av = t.param(s, a);
        let xv = t.leaf(x.clone());
        let y = t.matmul(av, xv)?;
        t.sum(y)
    };
    let r = grad_check(&mut store, linear, 1e-5, 100, 1e-6, &mut rng).unwrap();
    assert!(r.max_rel_error <= 1e-10, "{}", r.max_rel_error);
    let chain = |t: &mut Tape<f64>, s: &ParamStore<f64>| {
        let mut v = t.param(s, a);
        for _ in 0..3 {
            v = t.sigmoid(v)?;
        }
        t.sum(v)
    };
    let r = grad_check(&mut store, chain, 1e-5, 100, 1e-6, &mut rng).unwrap();
    assert!(r.max_rel_error <= 1e-6, "{}", r.max_rel_error);
}

#[test]
fn grad_check_catches_wrong_backward() {
    let mut rng = stream(6, Domain::Test, 0);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&[4], &mut rng, 0.5, 1.5)).unwrap();
    // forward x^2 with a backward rule claiming 3x
    let f = |t: &mut Tape<f64>, s: &ParamStore<f64>| {
        let av = t.param(s, a);
        let value = t.value(av).map(|v| v * v);
        let back: Rc<CustomBackward<f64>> =
            Rc::new(|ins: &[&Tensor<f64>], _out: &Tensor<f64>, g: &Tensor<f64>| {
                vec![ins[0].zip_map(g, "bad", |x, gv| 3.0 * x * gv).unwrap()]
            });
        let y = t.custom(&[av], value, back)?;
        t.sum(y)
    };
    let r = grad_check(&mut store, f, 1e-5, 10, 1e-6, &mut rng).unwrap();
    assert!(r.max_rel_error > 1e-2, "{}", r.max_rel_error);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = stream(8, Domain::Test, 0);
        let mut store = ParamStore::<f64>::new();
        let gru = Gru::new(&mut store, "g", 3, 5, &mut rng).unwrap();
        let xs = random(&[6, 3], &mut rng, -1.0, 1.0);
        let mut t = Tape::new();
        let mut bind = Binder::new(&store);
        let x = t.leaf(xs);
        let h = gru.sequence(&mut t, &mut bind, x).unwrap();
        let s = t.sum(h).unwrap();
        t.backward(s).unwrap().accumulate_into(&mut store);
        (t.value(h).clone(), store)
    };
    assert_eq!(run(), run());
}

#[test]
fn gru_sequence_matches_stepwise_cells() {
    let mut rng = stream(9, Domain::Test, 0);
    let mut store = ParamStore::<f64>::new();
    let gru = Gru::new(&mut store, "g", 2, 3, &mut rng).unwrap();
    let xs = random(&[4, 2], &mut rng, -1.0, 1.0);
    let mut t = Tape::new();
    let mut bind = Binder::new(&store);
    let x = t.leaf(xs.clone());
    let seq = gru.sequence(&mut t, &mut bind, x).unwrap();
    let mut h = t.leaf(Tensor::zeros(&[1, 3]));
    for step in 0..4 {
        let xi = t.slice(x, step, 1).unwrap();
        h = gru.cell(&mut t, &mut bind, xi, h).unwrap();
        let row = &t.value(seq).data()[step * 3..step * 3 + 3];
        assert_eq!(row, t.value(h).data());
    }
}

#[test]
fn f32_tapes_work() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let y = t.exp(x).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert!((g.wrt(x).unwrap().data()[1] - 2f32.exp()).abs() < 1e-5);
}
