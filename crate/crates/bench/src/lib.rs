//! Criterion benchmarks for the synchronization kernels; see `benches/sync.rs`.
