//! Benchmarks for the tracers, the induction and the analysis; see `benches/`.
