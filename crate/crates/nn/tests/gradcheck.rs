//! Finite-difference and scalar-loop oracles for the layer kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sda_nn::{Activation, Dense, Gru, ParamStore, Tape, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs())).max(1e-6)
}

/// Central differences for every parameter value; returns the worst relative
/// error against the tape gradient.
fn check<F>(store: &mut ParamStore, build: F) -> f64
where
    F: Fn(&mut Tape) -> Var,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        tape.backward(loss).unwrap()
    };
    let loss_at = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let l = build(&mut tape);
        tape.scalar_value(l)
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.value(id)[k];
            store.value_mut(id)[k] = orig + H;
            let up = loss_at(store);
            store.value_mut(id)[k] = orig - H;
            let down = loss_at(store);
            store.value_mut(id)[k] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(analytic.get(id)[k], numeric));
        }
    }
    worst
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn dense_gradients_match_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = [Activation::Tanh, Activation::Identity, Activation::Relu][seed as usize % 3];
        let mut store = ParamStore::new();
        let layer = Dense::register(&mut store, "d", 4, 3, act, 1.0, &mut rng).unwrap();
        // nonzero bias so relu kinks are unlikely to sit exactly at a probe
        let bias: Vec<f64> = random_vec(&mut rng, 3);
        store.value_mut(layer.b).copy_from_slice(&bias);
        let x = random_vec(&mut rng, 4);
        let err = check(&mut store, |t| {
            let xv = t.constant(x.clone());
            let y = layer.forward_tape(t, xv).unwrap();
            let y = t.tanh(y);
            t.sum(y)
        });
        assert!(err < TOL, "seed {seed}: rel err {err}");
    }
}

#[test]
fn gru_gradients_match_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut store = ParamStore::new();
        let gru = Gru::register(&mut store, "g", 3, 4, &mut rng).unwrap();
        for id in [gru.b_ih, gru.b_hh] {
            let b = random_vec(&mut rng, 12);
            store.value_mut(id).copy_from_slice(&b);
        }
        let x1 = random_vec(&mut rng, 3);
        let x2 = random_vec(&mut rng, 3);
        let h0: Vec<f64> = random_vec(&mut rng, 4).iter().map(|v| 0.9 * v).collect();
        let err = check(&mut store, |t| {
            let h = t.constant(h0.clone());
            let a = t.constant(x1.clone());
            let h = gru.forward_tape(t, a, h).unwrap();
            let b = t.constant(x2.clone());
            let h = gru.forward_tape(t, b, h).unwrap();
            let sq = t.square(h);
            t.sum(sq)
        });
        assert!(err < TOL, "seed {seed}: rel err {err}");
    }
}

#[test]
fn row_and_transpose_gradients_match_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let (rows, feat) = (3, 4);
        let mut store = ParamStore::new();
        let per_step = Dense::register(&mut store, "f", feat, feat, Activation::Tanh, 1.0, &mut rng).unwrap();
        let per_feat = Dense::register(&mut store, "t", rows, rows, Activation::Tanh, 1.0, &mut rng).unwrap();
        let x = random_vec(&mut rng, rows * feat);
        let err = check(&mut store, |t| {
            let xv = t.constant(x.clone());
            let a = per_step.forward_rows_tape(t, xv, rows).unwrap();
            let a = t.add(xv, a);
            let at = t.transpose(a, rows, feat).unwrap();
            let b = per_feat.forward_rows_tape(t, at, feat).unwrap();
            let b = t.add(at, b);
            let bt = t.transpose(b, feat, rows).unwrap();
            let w = t.constant((0..rows * feat).map(|i| (i as f64 * 0.37).sin()).collect());
            let p = t.mul(bt, w);
            t.sum(p)
        });
        assert!(err < TOL, "seed {seed}: rel err {err}");
    }
}

#[test]
fn loss_ops_match_finite_differences() {
    // log-softmax, pick, exp, clamp, min: the clipped-surrogate building blocks
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let mut store = ParamStore::new();
        let logits = store.add("logits", &[5], random_vec(&mut rng, 5)).unwrap();
        let old = rng.random_range(-2.5..-1.0);
        let adv = rng.random_range(-1.0..1.0);
        let err = check(&mut store, |t| {
            let l = t.param(logits);
            let lp = t.log_softmax(l);
            let a = t.pick(lp, 2).unwrap();
            let d = t.offset(a, -old);
            let r = t.exp(d);
            let s1 = t.scale(r, adv);
            let rc = t.clamp(r, 0.8, 1.2);
            let s2 = t.scale(rc, adv);
            let m = t.min(s1, s2);
            let p = t.exp(lp);
            let plp = t.mul(p, lp);
            let ent = t.sum(plp);
            let e = t.scale(ent, 0.01);
            t.add(m, e)
        });
        assert!(err < TOL, "seed {seed}: rel err {err}");
    }
}

#[test]
fn dense_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut store = ParamStore::new();
    let layer = Dense::register(&mut store, "d", 4, 3, Activation::Identity, 1.0, &mut rng).unwrap();
    let b = random_vec(&mut rng, 3);
    store.value_mut(layer.b).copy_from_slice(&b);
    let x = random_vec(&mut rng, 4);
    let w = store.value(layer.w).to_vec();
    let mut expected = vec![0.0; 3];
    for (r, e) in expected.iter_mut().enumerate() {
        *e = b[r];
        for c in 0..4 {
            *e += w[r * 4 + c] * x[c];
        }
    }
    let got = layer.forward(&store, &x).unwrap();
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-12);
    }
}

#[test]
fn dense_closed_forms() {
    let mut store = ParamStore::new();
    store.add("id.w", &[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    store.add_zeros("id.b", &[2]).unwrap();
    store.add_zeros("z.w", &[1, 5]).unwrap();
    store.add("z.b", &[1], vec![3.0]).unwrap();
    let id = Dense::lookup(&store, "id", Activation::Identity).unwrap();
    assert_eq!(id.forward(&store, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    let z = Dense::lookup(&store, "z", Activation::Identity).unwrap();
    assert_eq!(z.forward(&store, &[9.0, -1.0, 0.5, 7.0, 2.0]).unwrap(), vec![3.0]);
    assert!(z.forward(&store, &[1.0]).is_err());
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn gru_matches_scalar_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (inp, hid) = (3, 5);
    let mut store = ParamStore::new();
    let gru = Gru::register(&mut store, "g", inp, hid, &mut rng).unwrap();
    for id in [gru.b_ih, gru.b_hh] {
        let b = random_vec(&mut rng, 3 * hid);
        store.value_mut(id).copy_from_slice(&b);
    }
    let x = random_vec(&mut rng, inp);
    let h = random_vec(&mut rng, hid);
    let (wi, bi) = (store.value(gru.w_ih), store.value(gru.b_ih));
    let (wh, bh) = (store.value(gru.w_hh), store.value(gru.b_hh));
    let lin = |w: &[f64], b: &[f64], v: &[f64], row: usize| {
        let mut s = b[row];
        for (c, vc) in v.iter().enumerate() {
            s += w[row * v.len() + c] * vc;
        }
        s
    };
    let got = gru.forward(&store, &x, &h).unwrap();
    for k in 0..hid {
        let r = sigmoid(lin(wi, bi, &x, k) + lin(wh, bh, &h, k));
        let u = sigmoid(lin(wi, bi, &x, hid + k) + lin(wh, bh, &h, hid + k));
        let n = (lin(wi, bi, &x, 2 * hid + k) + r * lin(wh, bh, &h, 2 * hid + k)).tanh();
        let want = (1.0 - u) * n + u * h[k];
        assert!((got[k] - want).abs() < 1e-12);
    }
}

#[test]
fn gru_zero_params_halves_hidden() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let gru = Gru::register(&mut store, "g", 2, 3, &mut rng).unwrap();
    store.zero_all();
    let h = [0.4, -0.8, 0.1];
    let out = gru.forward(&store, &[0.7, -0.2], &h).unwrap();
    for (o, hv) in out.iter().zip(h) {
        assert!((o - 0.5 * hv).abs() < 1e-15);
    }
    assert_eq!(gru.forward(&store, &[0.0, 0.0], &[0.0; 3]).unwrap(), vec![0.0; 3]);
    assert!(gru.forward(&store, &[0.0], &h).is_err());
}

#[test]
fn tape_and_direct_paths_agree_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let gru = Gru::register(&mut store, "g", 6, 8, &mut rng).unwrap();
    let x = random_vec(&mut rng, 6);
    let h = random_vec(&mut rng, 8);
    let direct = gru.forward(&store, &x, &h).unwrap();
    let mut t = Tape::new(&store);
    let xv = t.constant(x);
    let hv = t.constant(h);
    let out = gru.forward_tape(&mut t, xv, hv).unwrap();
    assert_eq!(t.value(out), direct.as_slice());
}

mod properties {
    use super::{ChaCha8Rng, Gru, ParamStore};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    proptest! {
        #[test]
        fn gru_hidden_stays_in_open_unit_box(
            seed in 0u64..10_000,
            steps in 1usize..20,
            scale in 0.1f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let gru = Gru::register(&mut store, "g", 3, 6, &mut rng).unwrap();
            let mut h: Vec<f64> = (0..6).map(|_| rng.random_range(-0.99..0.99)).collect();
            for _ in 0..steps {
                let x: Vec<f64> = (0..3).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
                h = gru.forward(&store, &x, &h).unwrap();
                prop_assert!(h.iter().all(|v| v.abs() < 1.0));
            }
        }
    }
}
