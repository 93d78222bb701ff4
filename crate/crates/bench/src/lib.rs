//! Criterion benchmarks for the hot paths of `hiex-core`; see `benches/`.
