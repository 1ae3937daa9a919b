mod geometry;
mod models;

use criterion::{criterion_group, criterion_main};

criterion_group!(
    benches,
    geometry::bench_mst,
    geometry::bench_eigenbasis,
    models::bench_spatial_fit,
    models::bench_gbdt,
    models::bench_transfer,
);
criterion_main!(benches);
