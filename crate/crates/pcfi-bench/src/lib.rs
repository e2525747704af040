//! Criterion benchmarks for the enforcement pipeline live in `benches/`;
//! this crate intentionally exports nothing.
