use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use wlcasimir::loops::generate_unit_loop;
use wlcasimir::{estimate_spectral_many, LoopEnsemble, SamplerConfig, Scheme};
use wlcasimir_bench::{disks, tic_tac_toe, two_points};

fn loop_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("unit_loop");
    for points in [1024usize, 8192] {
        group.throughput(Throughput::Elements(points as u64));
        for (name, scheme) in [("bisection", Scheme::Bisection), ("incremental", Scheme::Incremental)] {
            let mut out = vec![0.0; 2 * (points + 1)];
            group.bench_with_input(BenchmarkId::new(name, points), &points, |b, &m| {
                let mut i = 0;
                b.iter(|| {
                    generate_unit_loop(7, i, m, 2, scheme, &mut out);
                    i += 1;
                    black_box(out[0])
                })
            });
        }
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral_sweep");
    group.sample_size(10);
    let betas: Vec<f64> = (0..16).map(|k| 0.05 * 1.5f64.powi(k)).collect();
    let sampler = SamplerConfig { workers: Some(1), ..SamplerConfig::default() };
    for (name, scene) in [("two_points", two_points()), ("tic_tac_toe", tic_tac_toe()), ("disks", disks())] {
        let ensemble = LoopEnsemble::generate(256, 1024, scene.dimension(), 3, Scheme::Bisection).unwrap();
        group.throughput(Throughput::Elements((ensemble.count() * betas.len()) as u64));
        group.bench_function(name, |b| {
            b.iter(|| estimate_spectral_many(black_box(&scene), &ensemble, &betas, &sampler).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, loop_generation, sweep);
criterion_main!(benches);
