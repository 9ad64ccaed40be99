use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hyprl_bench::{rng, uniform};
use hyprl_core::rl::train_ppo;
use hyprl_core::{HeadMode, Network, NetworkConfig, PpoConfig, Tape, TrainConfig};

const OBS_DIM: usize = 405;

fn network_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("network_forward_backward");
    group.sample_size(20);
    let obs = uniform(&mut rng(5), 64, OBS_DIM, 1.0);
    for mode in [HeadMode::Euclidean, HeadMode::EuclideanSn, HeadMode::Srym] {
        let mut net = Network::new(NetworkConfig::new(OBS_DIM, 32, 16, mode), &mut rng(6)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(mode.name()), &mode, |b, _| {
            b.iter(|| {
                net.refresh_spectral_norm();
                let tape = Tape::new();
                let fwd = net.forward(&tape, &obs, true).unwrap();
                tape.backward(fwd.outputs.sum()).unwrap()
            })
        });
    }
    group.finish();
}

fn ppo_update(c: &mut Criterion) {
    let cfg = TrainConfig {
        updates: 1,
        eval_every: 0,
        delta_every: 0,
        train_levels: 4,
        test_levels: 1,
        ..TrainConfig::default()
    };
    let ppo = PpoConfig {
        num_envs: 8,
        rollout_len: 32,
        ..PpoConfig::default()
    };
    let mut group = c.benchmark_group("ppo");
    group.sample_size(10);
    group.bench_function("one_update_8x32", |b| {
        b.iter(|| train_ppo(&cfg, &ppo, &mut |_| Ok(())).unwrap())
    });
    group.finish();
}

criterion_group!(benches, network_step, ppo_update);
criterion_main!(benches);
