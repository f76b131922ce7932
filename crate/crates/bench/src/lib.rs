//! Criterion benchmarks for `egohpo`; see `benches/`.
