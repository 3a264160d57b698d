//! Criterion benchmarks for spline evaluation and GBP iterations; see `benches/`.
