use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ddsm_core::nn::gradcheck::random_tensor;
use ddsm_core::nn::{mse_loss, Conv, Layer};
use ddsm_core::{Network, NetworkConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layer = Conv::new(2, 16, 16, 3, 1, &mut rng).unwrap();
    let x = random_tensor([16, 16, 1, 32, 32], 1);
    let dy = random_tensor([16, 16, 1, 32, 32], 2);
    let mut group = c.benchmark_group("conv_16x16x32x32");
    group.bench_function("forward", |b| b.iter(|| layer.apply(black_box(&x)).unwrap()));
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            Layer::forward(&mut layer, black_box(&x), true).unwrap();
            layer.backward(black_box(&dy)).unwrap()
        })
    });
    group.finish();
}

fn unet(c: &mut Criterion) {
    let cfg = NetworkConfig::desk(&[64, 64], 10);
    let mut net = Network::new(cfg).unwrap();
    let x = random_tensor([16, 12, 1, 64, 64], 3);
    let target = random_tensor([16, 1, 1, 64, 64], 4);
    let single = random_tensor([1, 12, 1, 64, 64], 5);
    let mut group = c.benchmark_group("desk_unet_64");
    group.sample_size(10);
    group.bench_function("predict_1", |b| b.iter(|| net.predict(black_box(&single)).unwrap()));
    group.bench_function("train_step_16", |b| {
        b.iter(|| {
            let y = net.forward(black_box(&x), true).unwrap();
            let (_, dy) = mse_loss(&y, &target).unwrap();
            net.backward(&dy).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, conv, unet);
criterion_main!(benches);
