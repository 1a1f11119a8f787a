use criterion::{criterion_group, criterion_main, Criterion};
use mamc_core::diffusion::default_denoiser_spec;
use mamc_core::imagecore::synth;
use mamc_core::training::{train_on_images, TrainConfig};
use mamc_core::{OracleConfig, OracleWeights, Protector, UNetSpec};

fn protect(c: &mut Criterion) {
    let p = Protector::build(UNetSpec::default(), 0).unwrap();
    let batch: Vec<_> = (0..8).map(|i| synth::image(0, i, 64)).collect();
    c.bench_function("protect_batch8_64", |b| b.iter(|| p.protect_batch(&batch).unwrap()));
}

fn oracle(c: &mut Criterion) {
    let o = OracleWeights::init(default_denoiser_spec(), 64, 0).unwrap();
    let img = synth::image(0, 0, 64);
    let mut group = c.benchmark_group("oracle_diffuse_64");
    for strength in [2u8, 5, 9] {
        let cfg = OracleConfig::default().with_strength(strength);
        group.bench_function(format!("strength_{strength}"), |b| b.iter(|| o.diffuse(&img, &cfg).unwrap()));
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let o = OracleWeights::init(default_denoiser_spec(), 64, 0).unwrap();
    let images: Vec<_> = (0..8).map(|i| synth::image(0, i, 64)).collect();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step_batch8_64", |b| b.iter(|| train_on_images(&images, &cfg, &o).unwrap()));
    group.finish();
}

criterion_group!(benches, protect, oracle, train_step);
criterion_main!(benches);
