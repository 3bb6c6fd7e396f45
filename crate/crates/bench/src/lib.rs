//! Criterion benchmarks for the codedcam solvers; see `benches/`.
