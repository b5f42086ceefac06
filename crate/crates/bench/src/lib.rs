//! Benchmarks for the convex blocks live in `benches/`.
