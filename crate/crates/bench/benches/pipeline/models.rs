use criterion::{BenchmarkId, Criterion};
use spatial_transfer::bench::generators::{gen_transfer_scene, TransferSceneSpec};
use spatial_transfer::gbdt::{train_gbdt, GbdtConfig};
use spatial_transfer::spatial_model::{fit_spatial, SpatialFitOptions};
use spatial_transfer::spectral::eigenbasis;
use spatial_transfer::transfer::{train_transfer, TransferProblem};
use spatial_transfer::{BasisOptions, SpatialTrainingData, TransferOptions};
use spatial_transfer_bench::{ones, regression, uniform_sites};

pub fn bench_spatial_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_spatial");
    group.sample_size(10);
    for n in [100, 400] {
        let sites = uniform_sites(n, 3);
        let basis = eigenbasis(&sites, &BasisOptions::default()).unwrap();
        let (x, y) = regression(n, 2, 3);
        let y = nalgebra::DVector::from_vec(y);
        let data = SpatialTrainingData::new(x, y, ones(n), basis).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| {
            b.iter(|| fit_spatial(d, &SpatialFitOptions::default()).unwrap())
        });
    }
    group.finish();
}

pub fn bench_gbdt(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_gbdt_300_trees");
    group.sample_size(10);
    let config = GbdtConfig {
        n_trees: 300,
        ..GbdtConfig::default()
    };
    for n in [500, 2000] {
        let (x, y) = regression(n, 5, 4);
        let w = vec![1.0; n];
        group.bench_with_input(BenchmarkId::from_parameter(n), &(x, y), |b, (x, y)| {
            b.iter(|| train_gbdt(x, y, &w, &config).unwrap())
        });
    }
    group.finish();
}

pub fn bench_transfer(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_transfer");
    group.sample_size(10);
    let scene = gen_transfer_scene(&TransferSceneSpec::standard(2, 50, 300, 4, 5)).unwrap();
    let problem = TransferProblem::new(scene.areas[0].clone(), scene.areas[1..].to_vec()).unwrap();
    let options = TransferOptions {
        gbdt: GbdtConfig {
            n_trees: 500,
            ..GbdtConfig::default()
        },
        ..TransferOptions::default()
    };
    group.bench_function("target_50_two_sources_300", |b| {
        b.iter(|| train_transfer(&problem, &options).unwrap())
    });
    group.finish();
}
