//! Criterion benchmarks for the simulator, allocator, CapEst loop and fixed-point solvers; see `benches/`.
