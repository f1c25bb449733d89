//! Deterministic minibatch SGD for small float networks.
//!
//! Per-sample gradients are computed in parallel but summed in sample order,
//! so a seed always produces bit-identical weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::network::{Activation, FloatLayer, FloatNetwork, LayerKind, LayerSpec, ShapeError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f32,
    /// Multiplier applied to the learning rate after every epoch.
    pub decay: f32,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { epochs: 30, batch: 16, learning_rate: 0.05, decay: 0.93, seed: 42 }
    }
}

/// He-uniform weights, zero biases.
pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<FloatNetwork, ShapeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|s| {
            let mut l = FloatLayer::new(s.clone());
            let fan_in = s.weights_per_channel().max(1) as f32;
            let bound = (6.0 / fan_in).sqrt();
            for w in &mut l.weights {
                *w = rng.gen_range(-bound..bound);
            }
            l
        })
        .collect();
    FloatNetwork::new(layers)
}

type Grads = Vec<(Vec<f32>, Vec<f32>)>;

fn relu_applies(net: &FloatNetwork, i: usize) -> bool {
    let s = &net.layers[i].spec;
    s.activation == Activation::Relu
        && i + 1 != net.layers.len()
        && !matches!(s.kind, LayerKind::MaxPool | LayerKind::AvgPool)
}

fn sample_grads(net: &FloatNetwork, x: &[f32], label: usize) -> (Grads, f32) {
    let outs = net.forward_all(x);
    let n = net.layers.len();
    let logits = &outs[n - 1];
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f32> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let loss = -(exps[label] / sum).max(1e-12).ln();

    let mut g: Vec<Vec<f32>> = outs.iter().map(|o| vec![0.0; o.len()]).collect();
    for (k, v) in g[n - 1].iter_mut().enumerate() {
        *v = exps[k] / sum - if k == label { 1.0 } else { 0.0 };
    }
    let mut grads: Grads = net.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect();

    for i in (0..n).rev() {
        let layer = &net.layers[i];
        let spec = &layer.spec;
        let input = if i == 0 { x } else { &outs[i - 1] };
        let mut dy = std::mem::take(&mut g[i]);
        if relu_applies(net, i) {
            for (d, &o) in dy.iter_mut().zip(&outs[i]) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let is = spec.in_shape();
        let os = spec.out_shape();
        let mut dx = vec![0.0f32; is.len()];
        let (dw, db) = &mut grads[i];
        let pad = spec.padding as isize;
        match spec.kind {
            LayerKind::Conv2d | LayerKind::Dense => {
                let (kh, kw, ci) = (spec.kernel_h, spec.kernel_w, spec.in_channels);
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        for co in 0..os.c {
                            let d = dy[os.index(oy, ox, co)];
                            if d == 0.0 {
                                continue;
                            }
                            db[co] += d;
                            for ky in 0..kh {
                                let iy = (oy * spec.stride + ky) as isize - pad;
                                if iy < 0 || iy >= is.h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * spec.stride + kx) as isize - pad;
                                    if ix < 0 || ix >= is.w as isize {
                                        continue;
                                    }
                                    let xi = is.index(iy as usize, ix as usize, 0);
                                    let wi = ((co * kh + ky) * kw + kx) * ci;
                                    for c in 0..ci {
                                        dw[wi + c] += d * input[xi + c];
                                        dx[xi + c] += d * layer.weights[wi + c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::DepthwiseConv2d => {
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        for c in 0..os.c {
                            let d = dy[os.index(oy, ox, c)];
                            db[c] += d;
                            for ky in 0..spec.kernel_h {
                                for kx in 0..spec.kernel_w {
                                    let iy = (oy * spec.stride + ky) as isize - pad;
                                    let ix = (ox * spec.stride + kx) as isize - pad;
                                    if iy < 0 || ix < 0 || iy >= is.h as isize || ix >= is.w as isize {
                                        continue;
                                    }
                                    let xi = is.index(iy as usize, ix as usize, c);
                                    let wi = (c * spec.kernel_h + ky) * spec.kernel_w + kx;
                                    dw[wi] += d * input[xi];
                                    dx[xi] += d * layer.weights[wi];
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::MaxPool | LayerKind::AvgPool => {
                let area = (spec.kernel_h * spec.kernel_w) as f32;
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        for c in 0..os.c {
                            let d = dy[os.index(oy, ox, c)];
                            let cells: Vec<usize> = (0..spec.kernel_h)
                                .flat_map(|ky| {
                                    (0..spec.kernel_w)
                                        .map(move |kx| is.index(oy * spec.stride + ky, ox * spec.stride + kx, c))
                                })
                                .collect();
                            if spec.kind == LayerKind::MaxPool {
                                let best = cells.iter().copied().fold(cells[0], |b, k| if input[k] > input[b] { k } else { b });
                                dx[best] += d;
                            } else {
                                for k in cells {
                                    dx[k] += d / area;
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::ResidualAdd => {
                let src = spec.residual_source.expect("validated");
                for (a, b) in g[src].iter_mut().zip(&dy) {
                    *a += b;
                }
                dx.copy_from_slice(&dy);
            }
        }
        if i > 0 {
            for (a, b) in g[i - 1].iter_mut().zip(&dx) {
                *a += b;
            }
        }
    }
    (grads, loss)
}

/// Trains in place; returns the mean loss of the final epoch.
pub fn train(net: &mut FloatNetwork, images: &[Vec<f32>], labels: &[u8], params: &TrainParams) -> f32 {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut lr = params.learning_rate;
    let mut last_loss = 0.0;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(params.batch.max(1)) {
            let per_sample: Vec<(Grads, f32)> =
                batch.par_iter().map(|&k| sample_grads(net, &images[k], labels[k] as usize)).collect();
            let scale = lr / batch.len() as f32;
            let mut total: Grads =
                net.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect();
            for (grads, loss) in &per_sample {
                epoch_loss += *loss as f64;
                for ((tw, tb), (gw, gb)) in total.iter_mut().zip(grads) {
                    for (a, b) in tw.iter_mut().zip(gw) {
                        *a += b;
                    }
                    for (a, b) in tb.iter_mut().zip(gb) {
                        *a += b;
                    }
                }
            }
            for (layer, (tw, tb)) in net.layers.iter_mut().zip(&total) {
                for (w, g) in layer.weights.iter_mut().zip(tw) {
                    *w -= scale * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(tb) {
                    *b -= scale * g;
                }
            }
        }
        last_loss = (epoch_loss / images.len().max(1) as f64) as f32;
        lr *= params.decay;
    }
    last_loss
}
