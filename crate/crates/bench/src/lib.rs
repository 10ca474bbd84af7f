//! Criterion benchmarks for the hot paths of `apr-core`; see `benches/core.rs`.
