//! Shared helpers for the benchmarks.

use marvin_core::datapath::{lane_range, Signedness};
use marvin_core::network::LayerSpec;
use marvin_core::quant::QuantLayer;
use marvin_core::PrecisionConfig;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// A weighted layer with random in-range weights and an 8-bit output.
pub fn random_layer(spec: LayerSpec, cfg: PrecisionConfig, seed: u64) -> QuantLayer {
    let mut rng = StdRng::seed_from_u64(seed);
    let (lo, hi) = lane_range(cfg.weight, Signedness::Signed);
    let n = spec.out_channels * spec.weights_per_channel();
    QuantLayer {
        weights: (0..n).map(|_| rng.gen_range(lo..=hi)).collect(),
        bias: (0..spec.out_channels).map(|_| rng.gen_range(-100..100)).collect(),
        spec,
        cfg: Some(cfg),
        weight_shift: 0,
        pruned: vec![],
        pruning_rate: 0.0,
        in_bits: cfg.activation,
        in_shift: 0,
        out_bits: Some(cfg.activation),
        out_shift: 0,
        requant_shift: 6,
    }
}

pub fn random_input(len: usize, cfg: PrecisionConfig, seed: u64) -> Vec<i32> {
    let mut rng = StdRng::seed_from_u64(seed);
    let hi = (1 << cfg.activation.bits()) - 1;
    (0..len).map(|_| rng.gen_range(0..=hi)).collect()
}
