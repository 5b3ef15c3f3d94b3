//! Criterion benchmarks for the slowfast kernels live in `benches/`.
