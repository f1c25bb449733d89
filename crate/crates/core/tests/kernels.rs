mod common;

use common::{random_input, random_layer, random_spec};
use marvin_core::isa::{BitWidth, InstrClass, Instruction, PrecisionConfig};
use marvin_core::kernels::{compile_layer, compile_network, KernelOptions, KernelStyle};
use marvin_core::network::{Activation, LayerKind, LayerSpec, Shape};
use marvin_core::quant::{quant_layer_forward, quantized_forward, QuantLayer, QuantNetwork};
use marvin_core::sim::CycleModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(layer: &QuantLayer, inputs: &[Vec<i32>], opts: &KernelOptions) {
    let expect = quant_layer_forward(layer, &inputs[0], inputs.get(1).map(|v| v.as_slice()));
    let refs: Vec<&[i32]> = inputs.iter().map(|v| v.as_slice()).collect();
    for style in [KernelStyle::Baseline, KernelStyle::Packed] {
        let prog = compile_layer(layer, style, opts).unwrap();
        let (got, report) = prog.execute(&refs, &CycleModel::default()).unwrap();
        assert_eq!(got, expect, "{style:?} {:?} {:?} {:?}", layer.spec, layer.cfg, layer.out_bits);
        assert_eq!(report.mac_count, layer.effective_macs());
    }
}

#[test]
fn weighted_layers_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in [LayerKind::Conv2d, LayerKind::DepthwiseConv2d, LayerKind::Dense] {
        for cfg in PrecisionConfig::all() {
            for trial in 0..6 {
                let spec = random_spec(&mut rng, kind);
                let layer = random_layer(&mut rng, spec.clone(), Some(cfg), cfg.activation, trial % 3 == 0);
                let x = random_input(&mut rng, spec.in_shape(), cfg.activation);
                for block in [1, 2, 4] {
                    check(&layer, std::slice::from_ref(&x), &KernelOptions { block });
                }
            }
        }
    }
}

#[test]
fn unweighted_layers_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for kind in [LayerKind::MaxPool, LayerKind::AvgPool, LayerKind::ResidualAdd] {
        for bits in BitWidth::ALL {
            for _ in 0..6 {
                let spec = random_spec(&mut rng, kind);
                let layer = random_layer(&mut rng, spec.clone(), None, bits, false);
                let mut inputs = vec![random_input(&mut rng, spec.in_shape(), bits)];
                if kind == LayerKind::ResidualAdd {
                    inputs.push(random_input(&mut rng, spec.in_shape(), bits));
                }
                check(&layer, &inputs, &KernelOptions::default());
            }
        }
    }
}

#[test]
fn large_pool_window_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for bits in BitWidth::ALL {
        let spec = LayerSpec::avg_pool(Shape::new(4, 8, 5), 4, 4);
        let layer = random_layer(&mut rng, spec.clone(), None, bits, false);
        check(&layer, &[random_input(&mut rng, spec.in_shape(), bits)], &KernelOptions::default());
        let spec = LayerSpec::max_pool(Shape::new(4, 4, 9), 4, 4);
        let layer = random_layer(&mut rng, spec.clone(), None, bits, false);
        check(&layer, &[random_input(&mut rng, spec.in_shape(), bits)], &KernelOptions::default());
    }
}

fn dense_mac_count(ci: usize, cfg: PrecisionConfig) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = LayerSpec::dense(Shape::new(1, 1, ci), 1).with_activation(Activation::None);
    let mut layer = random_layer(&mut rng, spec, Some(cfg), cfg.activation, true);
    layer.pruned.clear();
    layer.weights.iter_mut().for_each(|w| *w = 1);
    let prog = compile_layer(&layer, KernelStyle::Packed, &KernelOptions::default()).unwrap();
    let x = vec![1; ci];
    let (out, report) = prog.execute(&[&x], &CycleModel::default()).unwrap();
    assert_eq!(out[0], layer.bias[0] + ci as i32);
    report.class_counts[InstrClass::NnMac]
}

#[test]
fn dense_instruction_counts() {
    let w8a8 = PrecisionConfig::new(BitWidth::B8, BitWidth::B8);
    let w2a8 = PrecisionConfig::new(BitWidth::B2, BitWidth::B8);
    assert_eq!(dense_mac_count(4, w8a8), 1);
    assert_eq!(dense_mac_count(16, w2a8), 4);
}

#[test]
fn baseline_inner_loop_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = PrecisionConfig::new(BitWidth::B8, BitWidth::B8);
    let spec = LayerSpec::dense(Shape::new(1, 1, 64), 4);
    let layer = random_layer(&mut rng, spec, Some(cfg), cfg.activation, true);
    let prog = compile_layer(&layer, KernelStyle::Baseline, &KernelOptions::default()).unwrap();
    let code: Vec<Instruction> = prog.program.words.iter().map(|&w| marvin_core::decode(w).unwrap()).collect();
    let kinds: Vec<InstrClass> = code.iter().map(|i| i.class()).collect();
    let pattern = [
        InstrClass::Load,
        InstrClass::Load,
        InstrClass::Mul,
        InstrClass::Alu,
        InstrClass::Alu,
        InstrClass::Alu,
        InstrClass::Branch,
    ];
    assert!(kinds.windows(7).any(|w| w == pattern));
}

#[test]
fn network_matches_host_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let specs = vec![
        LayerSpec::conv2d(Shape::new(6, 6, 3), 8, 3, 1, 1),
        LayerSpec::depthwise(Shape::new(6, 6, 8), 3, 1, 1),
        LayerSpec::residual(Shape::new(6, 6, 8), 0),
        LayerSpec::max_pool(Shape::new(6, 6, 8), 2, 2),
        LayerSpec::conv2d(Shape::new(3, 3, 8), 16, 3, 1, 0),
        LayerSpec::dense(Shape::new(1, 1, 16), 10).with_activation(Activation::None),
    ];
    for cfg in PrecisionConfig::all() {
        let mut layers = Vec::new();
        let mut bits = cfg.activation;
        for (i, spec) in specs.iter().enumerate() {
            let last = i + 1 == specs.len();
            let mut l = if spec.is_mac() {
                random_layer(&mut rng, spec.clone(), Some(PrecisionConfig::new(cfg.weight, bits)), bits, last)
            } else {
                random_layer(&mut rng, spec.clone(), None, bits, false)
            };
            // the residual operand must share the width of layer 0's output
            if i == 0 || i == 1 {
                l.out_bits = Some(cfg.activation);
            }
            if let Some(b) = l.out_bits {
                bits = b;
            }
            layers.push(l);
        }
        let net = QuantNetwork { layers };
        let x = random_input(&mut rng, net.input_shape(), net.input_bits());
        let expect = quantized_forward(&net, &x).unwrap();
        for style in [KernelStyle::Baseline, KernelStyle::Packed] {
            let prog = compile_network(&net, style, &KernelOptions::default()).unwrap();
            let (got, report) = prog.execute(&[&x], &CycleModel::default()).unwrap();
            assert_eq!(got, expect, "{style:?} {cfg}");
            assert_eq!(report.mac_count, net.effective_macs());
            assert_eq!(report.per_layer.len(), specs.len());
        }
    }
}
