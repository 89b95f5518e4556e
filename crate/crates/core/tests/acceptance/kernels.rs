use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbs_tensor::{conv2d, conv_output_size, conv_transpose2d, LstmVars, Tape, Tensor, Var};

use crate::learning::Shared;
use crate::Verdict;

const STEP: f64 = 1e-5;
/// Below this gradient magnitude the absolute error is reported instead.
const SCALE_FLOOR: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn max_rel_error(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
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
            let scale = a.abs().max(numeric.abs());
            worst = worst.max(if scale > SCALE_FLOOR { diff / scale } else { diff });
        }
    }
    worst
}

type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>);

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut out: Vec<Case> = Vec::new();
    let weights = random(&[2, 6], rng);
    out.push((
        "matmul+bias_add",
        vec![random(&[3, 4], rng), random(&[4, 5], rng), random(&[5], rng)],
        Box::new(|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            let y = t.bias_add(y, v[2]).unwrap();
            let y = t.mul(y, y).unwrap();
            t.sum(y)
        }),
    ));
    let target = random(&[4, 3], rng);
    out.push((
        "dense+mse",
        vec![random(&[4, 5], rng), random(&[5, 3], rng), random(&[3], rng)],
        Box::new(move |t, v| {
            let y = t.dense(v[0], v[1], v[2]).unwrap();
            let tg = t.constant(target.clone());
            t.mse(y, tg).unwrap()
        }),
    ));
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        let w = random(&[1, conv_output_size(5, 3, stride, padding).unwrap(), conv_output_size(5, 3, stride, padding).unwrap(), 3], rng);
        out.push((
            "conv2d",
            vec![random(&[1, 5, 5, 2], rng), random(&[3, 3, 2, 3], rng)],
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], stride, padding).unwrap();
                let wv = t.constant(w.clone());
                let y = t.mul(y, wv).unwrap();
                t.sum(y)
            }),
        ));
    }
    out.push((
        "conv_transpose2d",
        vec![random(&[2, 3, 3, 2], rng), random(&[4, 4, 3, 2], rng), random(&[2, 6, 6, 3], rng)],
        Box::new(|t, v| {
            let y = t.conv_transpose2d(v[0], v[1], 2, 1).unwrap();
            let y = t.mul(y, v[2]).unwrap();
            t.sum(y)
        }),
    ));
    for which in 0..3 {
        let w = weights.clone();
        let name = ["relu", "sigmoid", "tanh"][which];
        out.push((
            name,
            vec![off_zero(&[2, 6], rng)],
            Box::new(move |t, v| {
                let y = match which {
                    0 => t.relu(v[0]),
                    1 => t.sigmoid(v[0]),
                    _ => t.tanh(v[0]),
                };
                let wv = t.constant(w.clone());
                let y = t.mul(y, wv).unwrap();
                t.sum(y)
            }),
        ));
    }
    out.push((
        "slice/concat/reshape/scale/add",
        vec![random(&[4, 6], rng), random(&[2, 6], rng), random(&[3, 4], rng)],
        Box::new(|t, v| {
            let cols = t.slice_cols(v[0], 1, 4).unwrap();
            let rows = t.slice_rows(cols, 1, 3).unwrap();
            let cat = t.concat_rows(&[v[0], v[1]]).unwrap();
            let r = t.reshape(cat, &[3, 12]).unwrap();
            let s = t.scale(r, 0.5);
            let s = t.mul(s, s).unwrap();
            let a = t.sum(s);
            let rw = t.mul(rows, v[2]).unwrap();
            let b = t.sum(rw);
            t.add(a, b).unwrap()
        }),
    ));
    let (batch, input, units) = (2, 3, 4);
    let target = random(&[batch, units], rng);
    out.push((
        "lstm_step x3",
        vec![
            random(&[3 * batch, input], rng),
            random(&[input, 4 * units], rng),
            random(&[units, 4 * units], rng),
            random(&[4 * units], rng),
            random(&[batch, units], rng),
            random(&[batch, units], rng),
        ],
        Box::new(move |t, v| {
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
        }),
    ));
    out
}

fn tensor32(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Worst relative gap of <conv(x), y> against <x, conv_transpose(y)> over random shapes.
fn adjoint_gap(rng: &mut ChaCha8Rng) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut tried = 0;
    while tried < 60 {
        let size = rng.random_range(4..10);
        let kernel = rng.random_range(1..5);
        let stride = rng.random_range(1..3);
        let padding = rng.random_range(0..2);
        if kernel > size + 2 * padding {
            continue;
        }
        let out = conv_output_size(size, kernel, stride, padding).unwrap();
        if (out - 1) * stride + kernel != size + 2 * padding {
            continue;
        }
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let x = tensor32(&[2, size, size, ci], rng);
        let k = tensor32(&[kernel, kernel, ci, co], rng);
        let y = tensor32(&[2, out, out, co], rng);
        let lhs = conv2d(&x, &k, stride, padding).unwrap().dot(&y) as f64;
        let rhs = x.dot(&conv_transpose2d(&y, &k, stride, padding).unwrap()) as f64;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
        tried += 1;
    }
    (worst, tried)
}

pub fn autodiff(_: &mut Shared) -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = ("", 0.0f64);
    for (name, inputs, f) in cases(&mut rng) {
        let e = max_rel_error(&inputs, f.as_ref());
        if e >= worst.1 {
            worst = (name, e);
        }
    }
    let (gap, pairs) = adjoint_gap(&mut rng);
    let secs = started.elapsed().as_secs_f64();
    Verdict::new(
        worst.1 < 1e-5 && gap < 1e-5 && secs < 60.0,
        format!(
            "max finite-difference rel error {:.2e} ({}), conv adjoint gap {gap:.2e} over {pairs} shapes, {secs:.1}s",
            worst.1, worst.0
        ),
    )
}
