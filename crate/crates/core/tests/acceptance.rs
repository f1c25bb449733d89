//! Acceptance checks. Runs as a plain binary and prints one PASS/FAIL
//! line per criterion; exits nonzero if any check fails.

mod common;

use std::time::{Duration, Instant};

use common::{random_input, random_layer, random_spec};
use marvin_core::data::Dataset;
use marvin_core::datapath::{
    lane_range, mul32_partial_products, nn_mac_bitlevel, nn_mac_functional, pack, schedule, soft_simd_dot,
    soft_simd_product, Signedness,
};
use marvin_core::dse::{
    exhaustive_dse, greedy_dse, hypervolume, layer_latency_table, memoized, pareto_front, DseParams, DseProblem,
};
use marvin_core::fixtures::{build, Fixture, FixtureModel};
use marvin_core::isa::{
    decode, encode, AluImmOp, AluOp, BitWidth, BranchCond, InstrClass, Instruction, PrecisionConfig, Reg,
    NN_MAC_FUNCT3, OPCODE_CUSTOM0,
};
use marvin_core::kernels::{compile_layer, compile_network, KernelOptions, KernelStyle};
use marvin_core::network::{Activation, LayerKind, LayerSpec, Shape};
use marvin_core::power::{dynamic_power, efficiency, total_power, DelayLaw, PowerParams, SlackTable};
use marvin_core::quant::{quantize_network, quantized_accuracy, quantized_forward, LayerChoice, QuantLayer};
use marvin_core::sim::{CycleModel, ExecutionReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let took = t.elapsed();
    o.detail = format!("{} [{:.2} s]", o.detail, took.as_secs_f64());
    if let Some(l) = limit {
        if took > l {
            o.pass = false;
            o.detail.push_str(&format!(" over the {} s limit", l.as_secs()));
        }
    }
    o
}

fn w8a8() -> PrecisionConfig {
    PrecisionConfig::new(BitWidth::B8, BitWidth::B8)
}

fn matched() -> [PrecisionConfig; 3] {
    BitWidth::ALL.map(|b| PrecisionConfig::new(b, b))
}

fn reg(rng: &mut ChaCha8Rng) -> Reg {
    Reg::x(rng.gen_range(0..32))
}

fn random_instruction(rng: &mut ChaCha8Rng) -> Instruction {
    let i = match rng.gen_range(0..10) {
        0 => Instruction::nn_mac(PrecisionConfig::all()[rng.gen_range(0..9)], reg(rng), reg(rng), reg(rng)),
        1 => Instruction::Alu { op: AluOp::ALL[rng.gen_range(0..10)], rd: reg(rng), rs1: reg(rng), rs2: reg(rng) },
        2 => {
            let op = AluImmOp::ALL[rng.gen_range(0..9)];
            let imm = if op.is_shift() { rng.gen_range(0..32) } else { rng.gen_range(-2048..2048) };
            Instruction::AluImm { op, rd: reg(rng), rs1: reg(rng), imm }
        }
        3 => Instruction::Lui { rd: reg(rng), imm: rng.gen_range(0..1 << 20) },
        4 => Instruction::Mul { rd: reg(rng), rs1: reg(rng), rs2: reg(rng) },
        5 => Instruction::Load { rd: reg(rng), rs1: reg(rng), offset: rng.gen_range(-2048..2048) },
        6 => Instruction::Store { rs1: reg(rng), rs2: reg(rng), offset: rng.gen_range(-2048..2048) },
        7 => Instruction::Branch {
            cond: BranchCond::ALL[rng.gen_range(0..6)],
            rs1: reg(rng),
            rs2: reg(rng),
            offset: 2 * rng.gen_range(-2048..2048),
        },
        8 => Instruction::Jal { rd: reg(rng), offset: 2 * rng.gen_range(-(1 << 19)..1 << 19) },
        _ => Instruction::Nop,
    };
    // addi x0, x0, 0 is the canonical nop
    match i {
        Instruction::AluImm { op: AluImmOp::Addi, rd: Reg::ZERO, rs1: Reg::ZERO, imm: 0 } => Instruction::Nop,
        other => other,
    }
}

fn c1_isa() -> Outcome {
    let table = [
        (8, 8, 0b000_1010),
        (8, 4, 0b000_0110),
        (8, 2, 0b000_0010),
        (4, 8, 0b000_1001),
        (4, 4, 0b000_0101),
        (4, 2, 0b000_0001),
        (2, 8, 0b000_1000),
        (2, 4, 0b000_0100),
        (2, 2, 0b000_0000),
    ];
    let mut bad = 0u64;
    let mut words = 0u64;
    for (w, a, funct7) in table {
        let cfg = PrecisionConfig::from_bits(w, a).unwrap();
        for rd in 0..32 {
            for rs1 in 0..32 {
                for rs2 in 0..32 {
                    let i = Instruction::nn_mac(cfg, Reg::x(rd), Reg::x(rs1), Reg::x(rs2));
                    let word = encode(&i).unwrap();
                    words += 1;
                    let fields = word >> 25 == funct7 && (word >> 12) & 7 == NN_MAC_FUNCT3 && word & 0x7f == OPCODE_CUSTOM0;
                    if !fields || decode(word) != Ok(i) {
                        bad += 1;
                    }
                }
            }
        }
    }
    // only the nine listed funct7 values decode under the custom opcode
    let listed: Vec<u32> = table.iter().map(|t| t.2).collect();
    for funct7 in 0..128u32 {
        for funct3 in 0..8u32 {
            let word = (funct7 << 25) | (3 << 20) | (2 << 15) | (funct3 << 12) | (1 << 7) | OPCODE_CUSTOM0;
            let ok = decode(word).is_ok();
            if ok != (funct3 == NN_MAC_FUNCT3 && listed.contains(&funct7)) {
                bad += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rt = 0;
    for _ in 0..10_000 {
        let i = random_instruction(&mut rng);
        let word = encode(&i).unwrap();
        if decode(word) != Ok(i) || encode(&decode(word).unwrap()).unwrap() != word {
            rt += 1;
        }
    }
    outcome(bad == 0 && rt == 0, format!("{words} nn_mac encodings, 1024 field probes, 10^4 random round trips; {bad} field and {rt} round-trip mismatches"))
}

fn c2_multiplier() -> Outcome {
    let edges = [
        0u32, 1, 2, 3, 0x7fff, 0x8000, 0xffff, 0x1_0000, 0x1_0001, 0x7fff_ffff, 0x8000_0000, 0x8000_0001, 0xffff_0000,
        0xffff_fffe, 0xffff_ffff, 0xdead_beef,
    ];
    let mut bad = 0;
    for &a in &edges {
        for &b in &edges {
            bad += (mul32_partial_products(a, b) != a.wrapping_mul(b)) as u32;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1_000_000 {
        let (a, b): (u32, u32) = (rng.gen(), rng.gen());
        bad += (mul32_partial_products(a, b) != a.wrapping_mul(b)) as u32;
    }
    outcome(bad == 0, format!("10^6 random pairs + {} boundary pairs, {bad} mismatches", edges.len() * edges.len()))
}

fn c3_lanes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for cfg in PrecisionConfig::all() {
        let (wl, wh) = lane_range(cfg.weight, Signedness::Signed);
        let (al, ah) = lane_range(cfg.activation, Signedness::Unsigned);
        let (nw, na) = (cfg.weight.lanes(), cfg.activation.lanes());
        for _ in 0..10_000 {
            let w: Vec<i32> = (0..nw).map(|_| rng.gen_range(wl..=wh)).collect();
            let a: Vec<i32> = (0..na).map(|_| rng.gen_range(al..=ah)).collect();
            let acc: i32 = rng.gen();
            let oracle = (0..cfg.products_per_instruction())
                .fold(acc, |s, k| s.wrapping_add(w[k].wrapping_mul(a[k % na])));
            let pw = pack(&w, cfg.weight, Signedness::Signed).unwrap();
            let pa = pack(&a, cfg.activation, Signedness::Unsigned).unwrap();
            let f = nn_mac_functional(acc, pw, pa, cfg).unwrap();
            let b = nn_mac_bitlevel(acc, pw, pa, cfg).unwrap().acc;
            bad += (f != oracle) as u32 + (b != f) as u32;
        }
    }
    let mut soft = 0;
    for a in 0..=255u32 {
        for w_lo in -2..=1 {
            for w_hi in -2..=1 {
                let (a_i, lo, hi) = (a as i32, w_lo, w_hi);
                soft += (soft_simd_product(a, lo, hi) != (a_i * lo, a_i * hi)) as u32;
            }
        }
    }
    for a_lo in 0..16u32 {
        for a_hi in 0..16u32 {
            for w_lo in -2..=1 {
                for w_hi in -2..=1 {
                    soft += (soft_simd_dot(a_lo, a_hi, w_lo, w_hi) != a_lo as i32 * w_lo + a_hi as i32 * w_hi) as u32;
                }
            }
        }
    }
    outcome(
        bad == 0 && soft == 0,
        format!("9 configs x 10^4 cases: {bad} mismatches; 4096-case soft-SIMD product and dual-activation sweeps: {soft} mismatches"),
    )
}

fn dense_nn_macs(ci: usize, cfg: PrecisionConfig) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = LayerSpec::dense(Shape::new(1, 1, ci), 1).with_activation(Activation::None);
    let layer = random_layer(&mut rng, spec, Some(cfg), cfg.activation, true);
    let prog = compile_layer(&layer, KernelStyle::Packed, &KernelOptions::default()).unwrap();
    let x = random_input(&mut rng, Shape::new(1, 1, ci), cfg.activation);
    let (_, report) = prog.execute(&[&x], &CycleModel::default()).unwrap();
    report.class_counts[InstrClass::NnMac]
}

fn c4_throughput() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for cfg in matched() {
        let p = cfg.products_per_instruction();
        let expect = 32 / cfg.weight.bits() as usize;
        let sched = schedule(cfg).products();
        let macs = dense_nn_macs(64, cfg);
        pass &= p == expect && sched == expect && macs == (64 / expect) as u64;
        parts.push(format!("{cfg}: {p} products, {macs} nn_mac for 64 MACs"));
    }
    let mixed: Vec<String> = PrecisionConfig::all()
        .iter()
        .filter(|c| c.weight != c.activation)
        .map(|c| format!("{c}={}", c.products_per_instruction()))
        .collect();
    outcome(pass, format!("{}; mixed widths pair min(lanes): {}", parts.join(", "), mixed.join(" ")))
}

fn c5_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let kinds = [
        LayerKind::Conv2d,
        LayerKind::DepthwiseConv2d,
        LayerKind::Dense,
        LayerKind::MaxPool,
        LayerKind::AvgPool,
        LayerKind::ResidualAdd,
    ];
    let (mut cases, mut bad) = (0, 0);
    for kind in kinds {
        for cfg in PrecisionConfig::all() {
            for trial in 0..4 {
                let spec = random_spec(&mut rng, kind);
                let layer = if spec.is_mac() {
                    random_layer(&mut rng, spec.clone(), Some(cfg), cfg.activation, trial == 0)
                } else {
                    random_layer(&mut rng, spec.clone(), None, cfg.activation, false)
                };
                let mut inputs = vec![random_input(&mut rng, spec.in_shape(), cfg.activation)];
                if kind == LayerKind::ResidualAdd {
                    inputs.push(random_input(&mut rng, spec.in_shape(), cfg.activation));
                }
                let refs: Vec<&[i32]> = inputs.iter().map(|v| v.as_slice()).collect();
                let run = |style| {
                    let prog = compile_layer(&layer, style, &KernelOptions::default()).unwrap();
                    prog.execute(&refs, &CycleModel::default()).unwrap().0
                };
                cases += 1;
                bad += (run(KernelStyle::Baseline) != run(KernelStyle::Packed)) as u32;
            }
        }
    }
    outcome(bad == 0, format!("{cases} random layers over 6 kinds x 9 configs, {bad} mismatches"))
}

fn unpruned_conv(spec: LayerSpec, cfg: PrecisionConfig, seed: u64) -> (QuantLayer, Vec<i32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = random_layer(&mut rng, spec.clone(), Some(cfg), cfg.activation, false);
    layer.pruned.clear();
    let (lo, hi) = lane_range(cfg.weight, Signedness::Signed);
    layer.weights.iter_mut().for_each(|w| *w = rng.gen_range(lo..=hi));
    let x = random_input(&mut rng, spec.in_shape(), cfg.activation);
    (layer, x)
}

fn both_styles(layer: &QuantLayer, x: &[i32], model: &CycleModel) -> (ExecutionReport, ExecutionReport) {
    let opts = KernelOptions::default();
    let run = |style| compile_layer(layer, style, &opts).unwrap().execute(&[x], model).unwrap().1;
    (run(KernelStyle::Baseline), run(KernelStyle::Packed))
}

fn c6_loads() -> Outcome {
    let spec = LayerSpec::conv2d(Shape::new(8, 8, 32), 32, 3, 1, 1);
    let ratios: Vec<f64> = matched()
        .iter()
        .map(|&cfg| {
            let (layer, x) = unpruned_conv(spec.clone(), cfg, 6);
            let (b, p) = both_styles(&layer, &x, &CycleModel::default());
            b.load_count as f64 / p.load_count as f64
        })
        .collect();
    let monotone = ratios[0] < ratios[1] && ratios[1] < ratios[2];
    let doubling = ratios[2] >= 2.0 * ratios[0];
    let envelope = ratios.iter().all(|r| (4.0..=32.0).contains(r));
    outcome(
        monotone && doubling && envelope,
        format!("8x8x32->32 3x3 conv load ratios w8a8 {:.2}, w4a4 {:.2}, w2a2 {:.2}", ratios[0], ratios[1], ratios[2]),
    )
}

/// Average baseline/packed cycle ratio per weight width over the three
/// activation widths, in weight order 8, 4, 2.
fn mode_speedups(model: &CycleModel, configs: &[PrecisionConfig]) -> [f64; 3] {
    let spec = LayerSpec::conv2d(Shape::new(16, 16, 64), 64, 3, 1, 1);
    let mut sums = [(0.0, 0); 3];
    for &cfg in configs {
        let (layer, x) = unpruned_conv(spec.clone(), cfg, 7);
        let (b, p) = both_styles(&layer, &x, model);
        let i = BitWidth::ALL.iter().position(|&w| w == cfg.weight).unwrap();
        sums[i].0 += b.total_cycles as f64 / p.total_cycles as f64;
        sums[i].1 += 1;
    }
    sums.map(|(s, n)| s / n as f64)
}

fn c7_modes() -> Outcome {
    let s = mode_speedups(&CycleModel::default(), &PrecisionConfig::all());
    let paper = [14.0, 24.0, 34.0];
    let ordered = s[2] > s[1] && s[1] > s[0];
    let within = s.iter().zip(paper).all(|(v, p)| (v / p - 1.0).abs() <= 0.35);
    let mut detail = format!("16x16x64->64 3x3 conv, mode averages {:.1} / {:.1} / {:.1}", s[0], s[1], s[2]);
    let variants = [
        ("load=1", CycleModel { load: 1, ..CycleModel::default() }),
        ("load=3", CycleModel { load: 3, ..CycleModel::default() }),
        ("taken=1", CycleModel { branch_taken: 1, ..CycleModel::default() }),
    ];
    for (name, model) in variants {
        let v = mode_speedups(&model, &matched());
        detail.push_str(&format!("; {name}: {:.1} / {:.1} / {:.1} (matched widths)", v[0], v[1], v[2]));
    }
    outcome(ordered && within, detail)
}

fn evaluator(fx: &Fixture) -> impl Fn(&[LayerChoice]) -> f64 + Sync + '_ {
    let cal = fx.calibration();
    let (x, y) = (fx.test_images(), fx.test_labels());
    memoized(move |c: &[LayerChoice]| {
        quantize_network(&fx.net, &cal, c).map(|q| quantized_accuracy(&q, &x, &y)).unwrap_or(0.0)
    })
}

fn problem(fx: &Fixture, params: &DseParams) -> DseProblem {
    let table = layer_latency_table(&fx.net.specs(), &params.pruning_rates(), &CycleModel::default(), &KernelOptions::default())
        .unwrap();
    DseProblem { table, baseline_accuracy: fx.float_accuracy }
}

fn c8_end_to_end(cnn: &Fixture) -> Outcome {
    let params = DseParams { threshold: 1.0, ..Default::default() };
    let eval = evaluator(cnn);
    let result = greedy_dse(&problem(cnn, &params), &params, &eval).unwrap();
    let Some(best) = result.front.iter().min_by_key(|p| p.total_cycles) else {
        return outcome(false, "no configuration within 1% accuracy loss");
    };
    let q = quantize_network(&cnn.net, &cnn.calibration(), &best.choices).unwrap();
    let x = q.quantize_input(&cnn.test_images()[0]);
    let run = |style| {
        compile_network(&q, style, &KernelOptions::default()).unwrap().execute(&[&x], &CycleModel::default()).unwrap().1
    };
    let (b, p) = (run(KernelStyle::Baseline), run(KernelStyle::Packed));
    let reduction = 1.0 - p.total_cycles as f64 / b.total_cycles as f64;
    let cfgs: Vec<String> = best.choices.iter().map(|c| format!("{}@{}", c.cfg, c.pruning_rate)).collect();
    outcome(
        reduction >= 0.90 && best.accuracy >= cnn.float_accuracy - 0.01,
        format!(
            "CNN float {:.4}, best [{}] accuracy {:.4}, {} vs {} cycles, reduction {:.1}% ({} evaluations)",
            cnn.float_accuracy,
            cfgs.join(" "),
            best.accuracy,
            p.total_cycles,
            b.total_cycles,
            100.0 * reduction,
            result.evaluations()
        ),
    )
}

fn c9_dse(mlp: &Fixture) -> Outcome {
    let params = DseParams { threshold: 1.0, refine: true, ..Default::default() };
    let problem = problem(mlp, &params);
    let eval = evaluator(mlp);
    let greedy = greedy_dse(&problem, &params, &eval).unwrap();
    let scalar = greedy_dse(&problem, &DseParams { refine: false, ..params }, &eval).unwrap();
    let full = exhaustive_dse(&problem, &params, &eval, 100_000).unwrap();
    let rc = full.evaluated.iter().map(|p| p.total_cycles).max().unwrap() as f64;
    let reference = (problem.baseline_accuracy - params.threshold / 100.0, rc);
    let hv_full = hypervolume(&full.front, reference).unwrap();
    let ratio = hypervolume(&greedy.front, reference).unwrap() / hv_full;
    let scalar_ratio = hypervolume(&scalar.front, reference).unwrap() / hv_full;
    let cheap = greedy.evaluations() * 10 <= full.evaluations();
    outcome(
        ratio >= 0.70 && cheap,
        format!(
            "MLP T=1: greedy {} evaluations vs exhaustive {}, hypervolume ratio {:.3} (uniform-rate sweep alone: {:.3} with {} evaluations)",
            greedy.evaluations(),
            full.evaluations(),
            ratio,
            scalar_ratio,
            scalar.evaluations()
        ),
    )
}

fn dominated(p: (f64, f64), q: (f64, f64)) -> bool {
    q.0 >= p.0 && q.1 <= p.1 && (q.0 > p.0 || q.1 < p.1)
}

fn c10_pareto() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bad_front = 0;
    let mut worst_hv: f64 = 0.0;
    for set in 0..1000 {
        let n = rng.gen_range(1..80);
        let coarse = set % 2 == 0;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if coarse {
                    (rng.gen_range(0..10) as f64 / 10.0, rng.gen_range(0..10) as f64)
                } else {
                    (rng.gen::<f64>(), rng.gen::<f64>() * 100.0)
                }
            })
            .collect();
        let mut oracle: Vec<(f64, f64)> =
            pts.iter().copied().filter(|&p| !pts.iter().any(|&q| dominated(p, q))).collect();
        let mut got = pareto_front(&pts);
        let key = |a: &(f64, f64), b: &(f64, f64)| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0));
        oracle.sort_by(key);
        got.sort_by(key);
        bad_front += (oracle != got) as u32;

        if set % 50 == 0 {
            let reference = (-0.01, 110.0);
            let hv = hypervolume(&pts, reference).unwrap();
            let samples = 200_000;
            let front = pareto_front(&pts);
            let (a_max, c_min) = (1.0, 0.0);
            let mut hits = 0u32;
            for _ in 0..samples {
                let s = (rng.gen_range(reference.0..a_max), rng.gen_range(c_min..reference.1));
                hits += front.iter().any(|p| p.0 >= s.0 && p.1 <= s.1) as u32;
            }
            let mc = hits as f64 / samples as f64 * (a_max - reference.0) * (reference.1 - c_min);
            worst_hv = worst_hv.max((hv - mc).abs() / hv);
        }
    }
    outcome(
        bad_front == 0 && worst_hv <= 0.01,
        format!("1000 random sets, {bad_front} front mismatches; worst hypervolume vs Monte-Carlo error {:.3}%", 100.0 * worst_hv),
    )
}

fn c11_power() -> Outcome {
    let p = PowerParams::default();
    let dyn_ratio = dynamic_power(&p, 0.7).unwrap() / dynamic_power(&p, 1.0).unwrap();
    let reduction = 1.0 - total_power(&p, 0.7).unwrap() / total_power(&p, 1.0).unwrap();
    let report = ExecutionReport { total_cycles: 1000, mac_count: 4000, ..Default::default() };
    let fitted = SlackTable::fitted(&DelayLaw::default()).unwrap();
    let gain = efficiency(&report, &p, 0.7, &fitted).unwrap().gops_per_w
        / efficiency(&report, &p, 1.0, &fitted).unwrap().gops_per_w;
    let vmin = fitted.min_valid_voltage().unwrap();
    let linear = SlackTable::endpoints().min_valid_voltage().unwrap();
    let mut spread = (f64::INFINITY, f64::NEG_INFINITY);
    for vt in [0.30, 0.35, 0.40, 0.45] {
        for alpha in [1.2, 1.3, 1.5, 2.0] {
            let v = SlackTable::fitted(&DelayLaw { vt, alpha }).unwrap().min_valid_voltage().unwrap();
            spread = (spread.0.min(v), spread.1.max(v));
        }
    }
    let pass = (dyn_ratio - 0.49).abs() < 1e-12
        && (reduction - 0.58).abs() <= 0.02
        && (gain - 2.38).abs() <= 0.1
        && (vmin - 0.62).abs() < 1e-9;
    outcome(
        pass,
        format!(
            "dynamic ratio {dyn_ratio:.4}, total reduction {:.1}%, GOPs/W gain {gain:.3}, min valid voltage {vmin:.2} V \
             (alpha-power fit; {:.2}-{:.2} V over vt 0.30-0.45, alpha 1.2-2.0; straight-line endpoints give {linear:.2} V), \
             static exponent {:.3}",
            100.0 * reduction,
            spread.0,
            spread.1,
            p.static_exponent
        ),
    )
}

fn c12_consistency(fixtures: &[&Fixture]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut runs, mut bad) = (0, 0);
    for fx in fixtures {
        let n = fx.net.specs().iter().filter(|s| s.is_mac()).count();
        for cfg in [w8a8(), PrecisionConfig::new(BitWidth::B4, BitWidth::B4)] {
            let q = quantize_network(&fx.net, &fx.calibration(), &vec![LayerChoice::new(cfg, 0.0); n]).unwrap();
            let progs = [KernelStyle::Baseline, KernelStyle::Packed]
                .map(|s| compile_network(&q, s, &KernelOptions::default()).unwrap());
            for _ in 0..20 {
                let x = random_input(&mut rng, q.input_shape(), q.input_bits());
                let host = quantized_forward(&q, &x).unwrap();
                for prog in &progs {
                    runs += 1;
                    bad += (prog.execute(&[&x], &CycleModel::default()).unwrap().0 != host) as u32;
                }
            }
        }
    }
    outcome(bad == 0, format!("MLP and CNN at w8a8 and w4a4, 20 random inputs each: {runs} simulations, {bad} mismatches"))
}

fn main() {
    let data = Dataset::digits();
    let mlp = build(FixtureModel::Mlp, &data, 42).unwrap();
    let cnn = build(FixtureModel::Cnn, &data, 42).unwrap();
    let secs = |s| Some(Duration::from_secs(s));
    let results = [
        ("ISA round-trip", timed(secs(1), c1_isa)),
        ("partial-product multiplier", timed(secs(5), c2_multiplier)),
        ("lane semantics oracle", timed(secs(30), c3_lanes)),
        ("throughput law", timed(None, c4_throughput)),
        ("value preservation", timed(secs(120), c5_equivalence)),
        ("memory-access reduction", timed(None, c6_loads)),
        ("mode speedups", timed(None, c7_modes)),
        ("end-to-end reduction", timed(secs(600), || c8_end_to_end(&cnn))),
        ("DSE quality", timed(secs(900), || c9_dse(&mlp))),
        ("Pareto/hypervolume correctness", timed(None, c10_pareto)),
        ("power model", timed(None, c11_power)),
        ("host/simulator consistency", timed(None, || c12_consistency(&[&mlp, &cnn]))),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
