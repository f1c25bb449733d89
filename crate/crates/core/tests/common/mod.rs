#![allow(dead_code)]

use marvin_core::datapath::{lane_range, Signedness};
use marvin_core::isa::{BitWidth, PrecisionConfig};
use marvin_core::network::{LayerKind, LayerSpec, Shape};
use marvin_core::quant::QuantLayer;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_layer(rng: &mut ChaCha8Rng, spec: LayerSpec, cfg: Option<PrecisionConfig>, in_bits: BitWidth, last: bool) -> QuantLayer {
    let mut weights = Vec::new();
    let mut bias = Vec::new();
    let mut pruned = Vec::new();
    let mut out_bits = Some(in_bits);
    let mut requant_shift = 0;
    if let Some(cfg) = cfg {
        let (lo, hi) = lane_range(cfg.weight, Signedness::Signed);
        let per = spec.weights_per_channel();
        for c in 0..spec.out_channels {
            let prune = spec.out_channels > 1 && rng.gen_bool(0.25);
            if prune {
                pruned.push(c);
            }
            for _ in 0..per {
                weights.push(if prune { 0 } else { rng.gen_range(lo..=hi) });
            }
            bias.push(if prune { 0 } else { rng.gen_range(-300..300) });
        }
        out_bits = if last { None } else { Some(BitWidth::ALL[rng.gen_range(0..3)]) };
        requant_shift = rng.gen_range(0..9);
    }
    QuantLayer {
        spec,
        cfg,
        weights,
        weight_shift: 0,
        bias,
        pruned,
        pruning_rate: 0.0,
        in_bits,
        in_shift: 0,
        out_bits,
        out_shift: 0,
        requant_shift,
    }
}

pub fn random_input(rng: &mut ChaCha8Rng, shape: Shape, bits: BitWidth) -> Vec<i32> {
    let hi = (1 << bits.bits()) - 1;
    (0..shape.len()).map(|_| rng.gen_range(0..=hi)).collect()
}

pub fn random_spec(rng: &mut ChaCha8Rng, kind: LayerKind) -> LayerSpec {
    let h = rng.gen_range(1..=8);
    let w = rng.gen_range(1..=8);
    let c = rng.gen_range(1..=8);
    let input = Shape::new(h, w, c);
    match kind {
        LayerKind::Conv2d => {
            let k = rng.gen_range(1..=3.min(h).min(w));
            let pad = rng.gen_range(0..=1);
            let stride = if (h + 2 * pad - k) % 2 == 0 && (w + 2 * pad - k) % 2 == 0 && rng.gen_bool(0.3) { 2 } else { 1 };
            LayerSpec::conv2d(input, rng.gen_range(1..=8), k, stride, pad)
        }
        LayerKind::DepthwiseConv2d => {
            let k = rng.gen_range(1..=3.min(h).min(w));
            LayerSpec::depthwise(input, k, 1, rng.gen_range(0..=1))
        }
        LayerKind::Dense => LayerSpec::dense(input, rng.gen_range(1..=8)),
        LayerKind::MaxPool | LayerKind::AvgPool => {
            let input = Shape::new(2 * h.div_ceil(2), 2 * w.div_ceil(2), c);
            if kind == LayerKind::MaxPool {
                LayerSpec::max_pool(input, 2, 2)
            } else {
                LayerSpec::avg_pool(input, 2, 2)
            }
        }
        LayerKind::ResidualAdd => LayerSpec::residual(input, 0),
    }
}
