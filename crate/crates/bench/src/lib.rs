//! Criterion benchmarks for the hot paths of `eqalign-core`; see `benches/`.
