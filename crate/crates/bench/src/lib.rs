//! Criterion benchmarks for update rounds; see `benches/`.
