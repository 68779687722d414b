//! Criterion benchmarks for svclab-core live under `benches/`.
