use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddsm_core::data::{SampleConfig, SampleGenerator};
use ddsm_core::dsm::{spectral_decomposition, DsmSolver, NormExponents, ProbingTable};
use ddsm_core::pde::{solve_neumann, BackgroundSolver};
use ddsm_core::{BoundaryTrace, CoefficientField, Grid, InclusionSet, Primitive};

fn neumann(c: &mut Criterion) {
    let mut group = c.benchmark_group("neumann");
    group.sample_size(10);
    for n in [51, 101] {
        let grid = Grid::square(n).unwrap();
        let mu = CoefficientField::constant(&grid, 1.0).unwrap();
        let flux = BoundaryTrace::from_values(
            &grid,
            grid.boundary().iter().map(|b| b.normal[0] * grid.coords(b.node)[0].exp()).collect(),
        )
        .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_neumann(&grid, &mu, black_box(&flux)).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let gen = SampleGenerator::new(SampleConfig::default()).unwrap();
    let mut group = c.benchmark_group("sample");
    group.sample_size(10);
    group.bench_function("generate_64", |b| b.iter(|| gen.generate(black_box(3)).unwrap()));
    group.finish();
}

fn probing(c: &mut Criterion) {
    let grid = Grid::square(41).unwrap();
    let bg = BackgroundSolver::new(&grid, 0.0).unwrap();
    let mut group = c.benchmark_group("probing");
    group.sample_size(10);
    group.bench_function("table_41", |b| b.iter(|| ProbingTable::build(black_box(&bg)).unwrap()));

    let gen = SampleGenerator::new(SampleConfig {
        grid: 64,
        n_pairs: 1,
        s: 1,
        ..SampleConfig::default()
    })
    .unwrap();
    let dsm = DsmSolver::new(gen.grid(), 0.0).unwrap();
    let sample = gen.generate(0).unwrap();
    group.bench_function("index_64", |b| {
        b.iter(|| dsm.index(black_box(&sample.pairs[0]), 1, NormExponents::default()).unwrap())
    });
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let grid = Grid::square(41).unwrap();
    let incl = InclusionSet::new(
        vec![Primitive::Circle {
            center: [0.3, 0.2],
            radius: 0.3,
        }],
        1.0,
        50.0,
    )
    .unwrap();
    let mut group = c.benchmark_group("spectral");
    group.sample_size(10);
    group.bench_function("decomposition_41_n8", |b| {
        b.iter(|| spectral_decomposition(&grid, black_box(&incl), 8, 3).unwrap())
    });
    group.finish();
}

criterion_group!(benches, neumann, sampling, probing, spectral);
criterion_main!(benches);
