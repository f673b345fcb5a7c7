//! Criterion benchmarks for the estimators and SMC primitives; see `benches/`.
