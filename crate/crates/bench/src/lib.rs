//! Criterion benchmarks for the core operators; see `benches/operators.rs`.
