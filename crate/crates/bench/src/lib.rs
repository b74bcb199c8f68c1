//! Criterion benchmarks for the `reram-puf` crate live under `benches/`.
