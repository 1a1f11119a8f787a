//! Criterion benchmarks for the core kernels and the protect/diffuse pipeline.
//! Run with `cargo bench -p mamc-bench`.
