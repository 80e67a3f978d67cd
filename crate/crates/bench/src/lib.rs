//! Criterion benchmarks for the pointebm kernels; see `benches/`.
