//! Analytic gradients against central finite differences, in f64.
//!
//! Each `*_case` builds a random small instance from `seed`, compares every
//! analytic partial derivative (or a strided subset) with
//! `(f(p + h) − f(p − h)) / 2h` and returns the largest relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::{leaky_relu_backward, leaky_relu_forward};
use super::conv::{conv2d_backward, conv2d_forward, ConvLayer};
use super::head::{assign_targets, Anchor, HeadLayout};
use super::loss::{yolo_loss, LossWeights};
use super::model::{Detector, DetectorConfig};
use super::tensor::Tensor;
use crate::maneuver::{DetectionBox, ManeuverClass};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error over every `every`-th coordinate of `params`.
pub fn max_rel_err(params: &mut [f64], analytic: &[f64], every: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut worst: f64 = 0.0;
    for i in (0..params.len()).step_by(every.max(1)) {
        let orig = params[i];
        params[i] = orig + STEP;
        let up = f(params);
        params[i] = orig - STEP;
        let down = f(params);
        params[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("length matches shape")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Input, weight and bias gradients of one random convolution, contracted
/// with a random upstream gradient.
pub fn conv_case(seed: u64, coordconv: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (rng.random_range(1..=3), rng.random_range(3..=7), rng.random_range(3..=7));
    let k = [1, 3][rng.random_range(0..2)];
    let s = rng.random_range(1..=2);
    let out = rng.random_range(1..=3);
    let mut layer = ConvLayer::zeros(out, c, k, s, k / 2, coordconv);
    layer.weight.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    layer.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let mut x = random_tensor(&mut rng, [2, c, h, w]);
    let y = conv2d_forward(&x, &layer).expect("consistent shapes");
    let r = random_tensor(&mut rng, y.shape());
    let g = conv2d_backward(&x, &layer, &r).expect("consistent shapes");

    let shape = x.shape();
    let gx = g.grad_x.data().to_vec();
    let e_x = max_rel_err(x.data_mut(), &gx, 1, |d| {
        let xt = Tensor::from_vec(shape, d.to_vec()).unwrap();
        dot(&conv2d_forward(&xt, &layer).unwrap(), &r)
    });
    let mut lw = layer.clone();
    let mut weights = lw.weight.clone();
    let e_w = max_rel_err(&mut weights, &g.grad_w, 1, |d| {
        lw.weight.copy_from_slice(d);
        dot(&conv2d_forward(&x, &lw).unwrap(), &r)
    });
    let mut lb = layer.clone();
    let mut bias = lb.bias.clone();
    let e_b = max_rel_err(&mut bias, &g.grad_b, 1, |d| {
        lb.bias.copy_from_slice(d);
        dot(&conv2d_forward(&x, &lb).unwrap(), &r)
    });
    e_x.max(e_w).max(e_b)
}

/// Leaky ReLU at points kept at least 0.01 away from the kink, where the
/// derivative is one-sided.
pub fn leaky_relu_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=20);
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.01..2.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    let mut x = Tensor::from_vec([1, 1, 1, n], vals).unwrap();
    let r = random_tensor(&mut rng, [1, 1, 1, n]);
    let analytic = leaky_relu_backward(&x, &r, 0.1).data().to_vec();
    max_rel_err(x.data_mut(), &analytic, 1, |d| {
        let xt = Tensor::from_vec([1, 1, 1, n], d.to_vec()).unwrap();
        dot(&leaky_relu_forward(&xt, 0.1), &r)
    })
}

fn random_gt(rng: &mut ChaCha8Rng, n: usize, w: f64, h: f64) -> Vec<DetectionBox> {
    (0..n)
        .map(|_| {
            let x0 = rng.random_range(0.0..w - 20.0);
            let t0 = rng.random_range(0.0..h - 20.0);
            let x1 = rng.random_range(x0 + 10.0..w);
            let t1 = rng.random_range(t0 + 10.0..h);
            let class = ManeuverClass::ALL[rng.random_range(0..4)];
            DetectionBox::new(class, x0, t0, x1, t1, 1.0).expect("ordered corners")
        })
        .collect()
}

/// The detection loss on a 3×3 grid with two anchors and up to three
/// ground-truth boxes per sample.
pub fn yolo_loss_case(seed: u64) -> f64 {
    let layout = HeadLayout {
        anchors: vec![Anchor { w: 64.0, h: 32.0 }, Anchor { w: 64.0, h: 96.0 }],
        stride: 32.0,
        grid_w: 3,
        grid_h: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<_> = (0..2)
        .map(|_| {
            let k = rng.random_range(0..=3);
            assign_targets(&random_gt(&mut rng, k, 96.0, 96.0), &layout)
        })
        .collect();
    let mut pred = random_tensor(&mut rng, [2, layout.channels(), 3, 3]);
    let w = LossWeights::default();
    let (_, grad) = yolo_loss(&pred, &targets, &layout, &w).unwrap();
    let analytic = grad.data().to_vec();
    let shape = pred.shape();
    max_rel_err(pred.data_mut(), &analytic, 1, |d| {
        let p = Tensor::from_vec(shape, d.to_vec()).unwrap();
        yolo_loss(&p, &targets, &layout, &w).unwrap().0.total
    })
}

/// Loss gradient with respect to every third parameter of a two-block
/// detector on 32×32 inputs.
pub fn detector_case(seed: u64, coordconv: bool) -> f64 {
    let cfg = DetectorConfig {
        input_width: 32,
        input_height: 32,
        channels: vec![3, 4],
        anchors: vec![Anchor { w: 16.0, h: 8.0 }, Anchor { w: 16.0, h: 24.0 }],
        coordconv,
        ..DetectorConfig::default()
    };
    let layout = cfg.layout();
    let det = Detector::<f64>::new(cfg.clone(), seed).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, [2, 1, 32, 32]);
    let targets: Vec<_> = (0..2)
        .map(|_| assign_targets(&random_gt(&mut rng, 2, 32.0, 32.0), &layout))
        .collect();
    let w = LossWeights::default();
    let (raw, cache) = det.forward_train(&x).unwrap();
    let (_, g) = yolo_loss(&raw, &targets, &layout, &w).unwrap();
    let grads = det.backward(&cache, &g).unwrap();
    let analytic: Vec<f64> = grads
        .weight
        .iter()
        .zip(&grads.bias)
        .flat_map(|(w, b)| w.iter().chain(b).copied())
        .collect();
    let mut flat = det.flat_params();
    max_rel_err(&mut flat, &analytic, 3, |d| {
        let m = Detector::from_flat(cfg.clone(), d).unwrap();
        yolo_loss(&m.forward(&x).unwrap(), &targets, &layout, &w).unwrap().0.total
    })
}
