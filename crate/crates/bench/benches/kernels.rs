use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mamc_core::eval::metrics;
use mamc_core::imagecore::synth;
use mamc_core::perceptual::Extractor;
use mamc_core::{Graph, Shape, Tensor};

fn conv_forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    for &(ch, side) in &[(16usize, 64usize), (32, 32), (64, 16)] {
        let x = Tensor::<f32>::full(Shape::new(4, ch, side, side), 0.5);
        let w = Tensor::<f32>::full(Shape::new(ch, ch, 3, 3), 0.01);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{ch}x{side}")), &(x, w), |b, (x, w)| {
            b.iter(|| {
                let mut g = Graph::<f32>::new();
                let xv = g.leaf(x.clone());
                let wv = g.leaf(w.clone());
                let y = g.conv2d(xv, wv, None, 1, 1);
                let s = g.mean_all(y);
                black_box(g.backward(s));
            })
        });
    }
    group.finish();
}

fn image_metrics(c: &mut Criterion) {
    let a = synth::image(0, 0, 64);
    let b = synth::image(0, 1, 64);
    let ext = Extractor::bundled();
    c.bench_function("psnr_64", |bch| bch.iter(|| metrics::psnr(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("ssim_64", |bch| bch.iter(|| metrics::ssim(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("perceptual_64", |bch| bch.iter(|| ext.perceptual_distance(&a, &b).unwrap()));
    let set_a: Vec<_> = (0..32).map(|i| synth::image(1, i, 64)).collect();
    let set_b: Vec<_> = (0..32).map(|i| synth::image(2, i, 64)).collect();
    c.bench_function("fid_32x64", |bch| bch.iter(|| metrics::fid(&set_a, &set_b, ext).unwrap()));
}

criterion_group!(benches, conv_forward_backward, image_metrics);
criterion_main!(benches);
