//! Criterion benchmarks for the vrpe crate live in `benches/`.
