//! Benchmarks of the decoding kernels live in `benches/kernels.rs`.
