//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use lra_core::credit::backprop_updates;
use lra_core::linalg::sample_gaussian;
use lra_core::{Activation, Layer, LayerSpec, Loss, Matrix, Network, Rng};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors, so components near zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

pub struct Problem {
    pub net: Network,
    pub x: Matrix,
    pub t: Matrix,
}

fn one_hot_rows(rng: &mut Rng, rows: usize, classes: usize) -> Matrix {
    let mut t = Matrix::zeros(rows, classes);
    for r in 0..rows {
        t.set(r, rng.below(classes), 1.0);
    }
    t
}

/// Random differentiable net of 1 to 4 layers, widths up to 8, tanh or sigmoid hidden units.
pub fn random_problem(rng: &mut Rng) -> Problem {
    let depth = 1 + rng.below(4);
    let input = 1 + rng.below(8);
    let batch = 1 + rng.below(5);
    let mut specs = Vec::with_capacity(depth);
    for _ in 0..depth - 1 {
        let act = if rng.bernoulli(0.5) {
            Activation::Tanh
        } else {
            Activation::Sigmoid
        };
        specs.push(LayerSpec::new(1 + rng.below(8), act, Loss::LogPenalty));
    }
    let out = 1 + rng.below(8);
    let top = match rng.below(3) {
        0 if out > 1 => LayerSpec::new(out, Activation::Softmax, Loss::CrossEntropy),
        1 => LayerSpec::new(out, Activation::Sigmoid, Loss::L2),
        _ => LayerSpec::new(out, Activation::Tanh, Loss::L2),
    };
    let softmax = top.activation == Activation::Softmax;
    specs.push(top);
    let mut net = Network::new(input, &specs).unwrap();
    for l in &mut net.layers {
        l.weights = sample_gaussian(rng, l.out_dim(), l.in_dim(), 0.0, 1.0).unwrap();
        l.bias = sample_gaussian(rng, 1, l.out_dim(), 0.0, 0.5)
            .unwrap()
            .into_vec();
    }
    let x = sample_gaussian(rng, batch, input, 0.0, 1.0).unwrap();
    let t = if softmax {
        one_hot_rows(rng, batch, out)
    } else {
        let mut t = Matrix::zeros(batch, out);
        for v in t.as_mut_slice() {
            *v = rng.uniform_range(-0.9, 0.9);
        }
        t
    };
    Problem { net, x, t }
}

fn param_mut(layer: &mut Layer, i: usize) -> &mut f64 {
    let nw = layer.weights.as_slice().len();
    if i < nw {
        &mut layer.weights.as_mut_slice()[i]
    } else {
        &mut layer.bias[i - nw]
    }
}

/// Central finite differences of the batch-summed top loss, in `[W_1, b_1, ...]` order.
pub fn fd_top_gradient(p: &Problem) -> Vec<f64> {
    let mut net = p.net.clone();
    let mut rng = Rng::new(0);
    let batch = p.x.rows() as f64;
    let mut out = Vec::new();
    for li in 0..net.layers.len() {
        let n = net.layers[li].weights.as_slice().len() + net.layers[li].bias.len();
        for i in 0..n {
            let orig = *param_mut(&mut net.layers[li], i);
            *param_mut(&mut net.layers[li], i) = orig + FD_STEP;
            let up = net.top_loss(&p.x, &p.t, &mut rng).unwrap();
            *param_mut(&mut net.layers[li], i) = orig - FD_STEP;
            let down = net.top_loss(&p.x, &p.t, &mut rng).unwrap();
            *param_mut(&mut net.layers[li], i) = orig;
            out.push(batch * (up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

/// Worst relative error between target-construction updates and finite differences.
pub fn lemma_one_error(p: &Problem) -> f64 {
    let trace = p.net.forward(&p.x, &mut Rng::new(0)).unwrap();
    let u = backprop_updates(&p.net, &trace, &p.t).unwrap();
    max_rel_err(&u.flatten(&p.net).unwrap(), &fd_top_gradient(p))
}

/// Draws a point at least `margin` away from every kink of `a`.
pub fn smooth_point(rng: &mut Rng, a: Activation, margin: f64) -> f64 {
    loop {
        let h = rng.uniform_range(-8.0, 8.0);
        if a.kinks().iter().all(|k| (h - k).abs() > margin) {
            return h;
        }
    }
}

/// Worst relative FD error of an element-wise activation derivative over `n` non-kink points.
pub fn activation_fd_error(a: Activation, n: usize, rng: &mut Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let h = smooth_point(rng, a, 1e-3);
        let fd = (a.apply_scalar(h + FD_STEP) - a.apply_scalar(h - FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(a.derivative_scalar(h), fd));
    }
    worst
}

/// Worst FD error of the fused softmax/cross-entropy error `z - y` over `n` random rows.
pub fn softmax_ce_fd_error(n: usize, rng: &mut Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let k = 2 + rng.below(7);
        let h = sample_gaussian(rng, 1, k, 0.0, 2.0).unwrap();
        let y = one_hot_rows(rng, 1, k);
        let spec = LayerSpec::new(k, Activation::Softmax, Loss::CrossEntropy);
        let layer = Network::new(1, &[spec]).unwrap().layers.remove(0);
        let z = Activation::Softmax.apply(&h);
        let analytic = layer.local_error(&h, &z, &y).unwrap();
        let value = |h: &Matrix| {
            Loss::CrossEntropy
                .value(Activation::Softmax.apply(h).row(0), y.row(0))
                .unwrap()
        };
        for j in 0..k {
            let mut up = h.clone();
            up.set(0, j, h.get(0, j) + FD_STEP);
            let mut down = h.clone();
            down.set(0, j, h.get(0, j) - FD_STEP);
            let fd = (value(&up) - value(&down)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.get(0, j), fd));
        }
    }
    worst
}

/// Worst FD error of a loss gradient with respect to `z` over `n` random points.
pub fn loss_fd_error(loss: Loss, n: usize, rng: &mut Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let k = 1 + rng.below(6);
        let (z, y): (Vec<f64>, Vec<f64>) = match loss {
            Loss::CrossEntropy => {
                let z: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.05, 1.0)).collect();
                let y: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
                (z, y)
            }
            _ => {
                let y: Vec<f64> = (0..k).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
                // stay clear of the L1 kink at z = y
                let z = y
                    .iter()
                    .map(|&y| {
                        let d = rng.uniform_range(0.01, 3.0);
                        if rng.bernoulli(0.5) {
                            y + d
                        } else {
                            y - d
                        }
                    })
                    .collect();
                (z, y)
            }
        };
        let g = loss.grad(&z, &y).unwrap();
        for j in 0..k {
            let mut up = z.clone();
            up[j] += FD_STEP;
            let mut down = z.clone();
            down[j] -= FD_STEP;
            let fd =
                (loss.value(&up, &y).unwrap() - loss.value(&down, &y).unwrap()) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g[j], fd));
        }
    }
    worst
}
