//! Compares the data-parallel map (enabled by the `parallel` feature) with
//! the always-sequential fallback on the two dominant workloads: dense
//! support-geometry evaluation on a grid, and Monte Carlo eigenvalue trials.

use brownlab::brown::point_data;
use brownlab::c64;
use brownlab::ensembles::{eigenvalues, sample_iid, DeformedModel, Dist, Field, ModelSpec};
use brownlab::util::{derive_seed, par_map, seq_map};
use criterion::{criterion_group, criterion_main, Criterion};

fn grid_nodes() -> Vec<c64> {
    let m = 24;
    (0..m)
        .flat_map(|i| {
            (0..m).map(move |j| {
                c64::new(
                    -2.0 + 4.0 * i as f64 / (m - 1) as f64,
                    -2.0 + 4.0 * j as f64 / (m - 1) as f64,
                )
            })
        })
        .collect()
}

fn jordan_model(n: usize) -> DeformedModel {
    DeformedModel::build(
        &ModelSpec::Jordan { n, lambda: [0.0, 0.0] },
        Field::Complex,
        Dist::Gaussian,
    )
    .unwrap()
}

fn bench_grid(c: &mut Criterion) {
    // A non-diagonal deformation forces the dense (inverse-based) evaluation.
    let model = jordan_model(32);
    let nodes = grid_nodes();
    let mut g = c.benchmark_group("point_data_grid");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter(|| par_map(nodes.len(), |k| point_data(&model, nodes[k]).unwrap().f))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| seq_map(nodes.len(), |k| point_data(&model, nodes[k]).unwrap().f))
    });
    g.finish();
}

fn bench_mc(c: &mut Criterion) {
    let model = DeformedModel::zero(64, Field::Complex, Dist::Gaussian);
    let trials = 8;
    let run = |k: usize| {
        let x = sample_iid(&model, derive_seed(7, k as u64));
        let b = &model.a + &x.entries;
        eigenvalues(&b).unwrap().len()
    };
    let mut g = c.benchmark_group("mc_eigenvalues");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| par_map(trials, run)));
    g.bench_function("sequential", |b| b.iter(|| seq_map(trials, run)));
    g.finish();
}

criterion_group!(benches, bench_grid, bench_mc);
criterion_main!(benches);
