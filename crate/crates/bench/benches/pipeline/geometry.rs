use criterion::{BenchmarkId, Criterion};
use spatial_transfer::geo;
use spatial_transfer::spectral::eigenbasis;
use spatial_transfer::BasisOptions;
use spatial_transfer_bench::uniform_sites;

pub fn bench_mst(c: &mut Criterion) {
    let mut group = c.benchmark_group("mst_max_edge");
    for n in [100, 1000] {
        let sites = uniform_sites(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &sites, |b, s| {
            b.iter(|| geo::mst_max_edge(s).unwrap())
        });
    }
    group.finish();
}

pub fn bench_eigenbasis(c: &mut Criterion) {
    let mut group = c.benchmark_group("eigenbasis");
    group.sample_size(10);
    for n in [100, 400] {
        let sites = uniform_sites(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &sites, |b, s| {
            b.iter(|| eigenbasis(s, &BasisOptions::default()).unwrap())
        });
    }
    group.finish();
}
