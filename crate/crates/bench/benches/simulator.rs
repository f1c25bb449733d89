use criterion::{criterion_group, criterion_main, Criterion};
use marvin_bench::{random_input, random_layer};
use marvin_core::kernels::{compile_layer, KernelOptions, KernelStyle};
use marvin_core::network::{LayerSpec, Shape};
use marvin_core::{BitWidth, CycleModel, PrecisionConfig};

fn conv(c: &mut Criterion) {
    let spec = LayerSpec::conv2d(Shape::new(8, 8, 32), 32, 3, 1, 1);
    let model = CycleModel::default();
    for (w, a) in [(BitWidth::B8, BitWidth::B8), (BitWidth::B2, BitWidth::B2)] {
        let cfg = PrecisionConfig::new(w, a);
        let layer = random_layer(spec.clone(), cfg, 1);
        let x = random_input(spec.in_shape().len(), cfg, 2);
        for style in [KernelStyle::Baseline, KernelStyle::Packed] {
            let prog = compile_layer(&layer, style, &KernelOptions::default()).unwrap();
            c.bench_function(&format!("conv8x8x32/{cfg}/{style:?}"), |b| b.iter(|| prog.execute(&[&x], &model).unwrap()));
        }
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv
}
criterion_main!(benches);
