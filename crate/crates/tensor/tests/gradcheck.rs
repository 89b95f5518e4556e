//! Central finite differences against the tape, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbs_tensor::{LstmVars, Tape, Tensor, Var};

const STEP: f64 = 1e-5;
const MAX_REL: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-8;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random values bounded away from zero so ReLU kinks stay out of the stencil.
fn random_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// Max relative error between tape gradients and central differences over
/// every element of every input.
fn max_rel_error(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();

    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let a = analytic.data()[j];
            let diff = (a - numeric).abs();
            if diff <= ABS_FLOOR {
                continue;
            }
            worst = worst.max(diff / a.abs().max(numeric.abs()));
        }
    }
    worst
}

#[test]
fn conv2d_sum_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[1, 5, 5, 2], &mut rng);
    let k = random(&[3, 3, 2, 3], &mut rng);
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        let err = max_rel_error(&[x.clone(), k.clone()], |t, v| {
            let y = t.conv2d(v[0], v[1], stride, padding).unwrap();
            t.sum(y)
        });
        assert!(err < MAX_REL, "stride {stride} pad {padding}: {err}");
    }
}

#[test]
fn conv_transpose2d_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 3, 3, 2], &mut rng);
    let k = random(&[4, 4, 3, 2], &mut rng);
    let w = random(&[2, 6, 6, 3], &mut rng);
    let err = max_rel_error(&[x, k, w], |t, v| {
        let y = t.conv_transpose2d(v[0], v[1], 2, 1).unwrap();
        let yw = t.mul(y, v[2]).unwrap();
        t.sum(yw)
    });
    assert!(err < MAX_REL, "{err}");
}

#[test]
fn dense_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[4, 5], &mut rng);
    let w = random(&[5, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let target = random(&[4, 3], &mut rng);
    let err = max_rel_error(&[x, w, b], |t, v| {
        let y = t.dense(v[0], v[1], v[2]).unwrap();
        let tg = t.constant(target.clone());
        t.mse(y, tg).unwrap()
    });
    assert!(err < MAX_REL, "{err}");
}

#[test]
fn mse_gradient_is_two_diff_over_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random(&[3, 4], &mut rng);
    let q = random(&[3, 4], &mut rng);
    let err = max_rel_error(&[p.clone(), q.clone()], |t, v| t.mse(v[0], v[1]).unwrap());
    assert!(err < MAX_REL, "{err}");

    let mut tape = Tape::new();
    let pv = tape.param(p.clone());
    let qv = tape.constant(q.clone());
    let l = tape.mse(pv, qv).unwrap();
    tape.backward(l).unwrap();
    for ((g, a), b) in tape.grad(pv).unwrap().data().iter().zip(p.data()).zip(q.data()) {
        assert!((g - 2.0 * (a - b) / 12.0).abs() < 1e-15);
    }
}

#[test]
fn pointwise_activations_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_off_zero(&[2, 6], &mut rng);
    let w = random(&[2, 6], &mut rng);
    for which in 0..3 {
        let err = max_rel_error(&[x.clone(), w.clone()], |t, v| {
            let y = match which {
                0 => t.relu(v[0]),
                1 => t.sigmoid(v[0]),
                _ => t.tanh(v[0]),
            };
            let yw = t.mul(y, v[1]).unwrap();
            t.sum(yw)
        });
        assert!(err < MAX_REL, "activation {which}: {err}");
    }
}

#[test]
fn structural_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[4, 6], &mut rng);
    let y = random(&[2, 6], &mut rng);
    let w = random(&[3, 4], &mut rng);
    let err = max_rel_error(&[x, y, w], |t, v| {
        let cols = t.slice_cols(v[0], 1, 4).unwrap();
        let rows = t.slice_rows(cols, 1, 3).unwrap();
        let cat = t.concat_rows(&[v[0], v[1]]).unwrap();
        let r = t.reshape(cat, &[3, 12]).unwrap();
        let s = t.scale(r, 0.5);
        let a = t.sum(s);
        let rw = t.mul(rows, v[2]).unwrap();
        let b = t.sum(rw);
        t.add(a, b).unwrap()
    });
    assert!(err < MAX_REL, "{err}");
}

#[test]
fn lstm_three_steps_match_finite_differences() {
    let (batch, input, units) = (2, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs = random(&[3 * batch, input], &mut rng);
    let wx = random(&[input, 4 * units], &mut rng);
    let wh = random(&[units, 4 * units], &mut rng);
    let b = random(&[4 * units], &mut rng);
    let h0 = random(&[batch, units], &mut rng);
    let c0 = random(&[batch, units], &mut rng);
    let target = random(&[batch, units], &mut rng);
    let err = max_rel_error(&[xs, wx, wh, b, h0, c0], |t, v| {
        let p = LstmVars {
            w_x: v[1],
            w_h: v[2],
            bias: v[3],
        };
        let (mut h, mut c) = (v[4], v[5]);
        for step in 0..3 {
            let x = t.slice_rows(v[0], step * batch, batch).unwrap();
            (h, c) = t.lstm_step(x, h, c, &p).unwrap();
        }
        let tg = t.constant(target.clone());
        let l1 = t.mse(h, tg).unwrap();
        let l2 = t.sum(c);
        let l2 = t.scale(l2, 0.1);
        t.add(l1, l2).unwrap()
    });
    assert!(err < 1e-5, "{err}");
}

#[test]
fn backward_of_summed_losses_is_sum_of_backwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[1, 4, 4, 2], &mut rng);
    let k = random(&[3, 3, 2, 2], &mut rng);
    let t1 = random(&[1, 4, 4, 2], &mut rng);
    let t2 = random(&[1, 4, 4, 2], &mut rng);

    let grads = |which: u8| {
        let mut tape = Tape::new();
        let kv = tape.param(k.clone());
        let xv = tape.constant(x.clone());
        let y = tape.conv2d(xv, kv, 1, 1).unwrap();
        let a = tape.constant(t1.clone());
        let b = tape.constant(t2.clone());
        let la = tape.mse(y, a).unwrap();
        let lb = tape.mse(y, b).unwrap();
        let loss = match which {
            0 => la,
            1 => lb,
            _ => tape.add(la, lb).unwrap(),
        };
        tape.backward(loss).unwrap();
        tape.grad(kv).unwrap().clone()
    };
    let (ga, gb, gs) = (grads(0), grads(1), grads(2));
    for ((a, b), s) in ga.data().iter().zip(gb.data()).zip(gs.data()) {
        assert!((a + b - s).abs() < 1e-12);
    }
}
