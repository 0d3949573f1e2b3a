use capest_core::allocator::{allocate, AllocationState, AllocatorConfig};
use capest_core::estimator::ResidualEstimate;
use capest_core::experiment::{run_capest, CapEstConfig};
use capest_core::fixedpoint::{capest_iterate, find_fixed_point, verify_shape, WlanModel};
use capest_core::macsim::{run_iteration, AccessPolicy, LinkLoad, MacConfig, StopRule};
use capest_core::topo::{builtin_topology, BuiltinTopology};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn simulator(c: &mut Criterion) {
    let topo = builtin_topology(BuiltinTopology::Fim);
    let mac = MacConfig::default();
    let loads: Vec<LinkLoad> = topo.link_ids().map(|l| LinkLoad::new(l, 140.0)).collect();
    c.bench_function("fim iteration, quota 200", |b| {
        b.iter(|| {
            run_iteration(
                &topo,
                black_box(&loads),
                &mac,
                &AccessPolicy::DcfBasic,
                StopRule::quota(200, 60_000_000),
                7,
            )
            .unwrap()
        })
    });
}

fn allocator(c: &mut Criterion) {
    let topo = builtin_topology(BuiltinTopology::ChainCross);
    let nbr = topo.neighborhood();
    let state = AllocationState::initial(&topo, 1.0);
    let residuals: Vec<Option<ResidualEstimate>> = topo
        .link_ids()
        .map(|l| {
            Some(ResidualEstimate {
                link: l,
                service_rate: 400.0 + 10.0 * l.0 as f64,
                residual: 300.0 - 5.0 * l.0 as f64,
                t_bar: 744.727,
            })
        })
        .collect();
    let cfg = AllocatorConfig::default();
    c.bench_function("chain-cross allocator step", |b| {
        b.iter(|| allocate(black_box(&state), black_box(&residuals), &nbr, &topo, &cfg).unwrap())
    });
}

fn capest_loop(c: &mut Criterion) {
    let topo = builtin_topology(BuiltinTopology::Fim);
    let cfg = CapEstConfig {
        iterations: 10,
        ..CapEstConfig::default()
    };
    let mut g = c.benchmark_group("capest");
    g.sample_size(10);
    g.bench_function("fim, 10 iterations", |b| {
        b.iter(|| {
            run_capest(
                &topo,
                &MacConfig::default(),
                &AccessPolicy::DcfBasic,
                black_box(&cfg),
            )
            .unwrap()
        })
    });
    g.finish();
}

fn fixed_point(c: &mut Criterion) {
    let m = WlanModel::canonical(10, 20.0, 800.0, 16.0, 7).unwrap();
    c.bench_function("fixed point bisection, n=10", |b| {
        b.iter(|| find_fixed_point(black_box(&m), 1e-9).unwrap())
    });
    c.bench_function("capest iteration, n=10", |b| {
        b.iter(|| capest_iterate(black_box(&m), 1e-4 * m.psi_zero(), 0.9, 1e-12, 100_000).unwrap())
    });
    c.bench_function("shape scan, 1000 points", |b| {
        b.iter(|| verify_shape(black_box(&m), 1000).unwrap())
    });
}

criterion_group!(benches, simulator, allocator, capest_loop, fixed_point);
criterion_main!(benches);
