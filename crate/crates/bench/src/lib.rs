//! Criterion benchmarks for the kernels in `replay-forge`; see `benches/`.
