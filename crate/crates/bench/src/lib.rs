//! Criterion benchmarks for graphweight live under `benches/`.
