use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use imarl_core::engine::WorldState;
use imarl_core::influence::{aggregate_maim, encode_maim, maim_normalizer};
use imarl_core::neural::layers::Conv2d;
use imarl_core::neural::{Batch, Head, Mode, Network, NetworkSpec, Tensor};
use imarl_core::{AimParams, ScenarioSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = Conv2d {
        in_channels: 32,
        filters: 32,
        height: 32,
        width: 32,
    };
    let kernels = random(layer.kernel_len(), &mut rng);
    let bias = random(layer.filters, &mut rng);
    let input = random(layer.input_len(), &mut rng);
    let d_out = random(layer.output_len(), &mut rng);
    c.bench_function("conv3x3_32x32x32_forward", |b| {
        b.iter(|| layer.forward(black_box(&kernels), &bias, black_box(&input)).unwrap())
    });
    c.bench_function("conv3x3_32x32x32_backward", |b| {
        let mut gk = vec![0.0; layer.kernel_len()];
        let mut gb = vec![0.0; layer.filters];
        let mut di = vec![0.0; layer.input_len()];
        b.iter(|| {
            layer
                .backward(&kernels, black_box(&input), black_box(&d_out), &mut gk, &mut gb, Some(&mut di))
                .unwrap()
        })
    });
}

fn network(c: &mut Criterion) {
    let spec = NetworkSpec::new(28, 64, 64, Head::Policy { actions: 9 });
    let net = Network::new(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = net.init_params(&mut rng);
    let maims = [Tensor::from_vec(vec![1, 64, 64], random(64 * 64, &mut rng)).unwrap()];
    // One step of a 3-agent team: three rows sharing one MAIM.
    let observations = random(3 * 28, &mut rng);
    let batch = Batch {
        observations: &observations,
        maims: &maims,
        row_maim: &[0, 0, 0],
    };
    c.bench_function("dense_cnn_actor_forward_3rows", |b| {
        b.iter(|| net.forward(&params, black_box(&batch), Mode::Eval, &mut rng).unwrap())
    });
    c.bench_function("dense_cnn_actor_forward_backward_3rows", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(3),
            |mut r| {
                let (y, cache) = net.forward(&params, &batch, Mode::Train, &mut r).unwrap();
                net.backward(&params, &cache, &y).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn maim(c: &mut Criterion) {
    let spec = ScenarioSpec::shipped("25m").unwrap();
    let world = WorldState::load(&spec, 0).unwrap();
    let params = AimParams::default();
    let norm = maim_normalizer(&spec);
    c.bench_function("maim_25m_64x64", |b| {
        b.iter(|| encode_maim::<f32>(&aggregate_maim(black_box(&world), &params), norm))
    });
}

criterion_group!(benches, conv, network, maim);
criterion_main!(benches);
