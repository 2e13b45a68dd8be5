//! Criterion benchmarks for `brlr-core`; see `benches/`.
