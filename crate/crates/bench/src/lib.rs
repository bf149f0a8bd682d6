//! Criterion benchmarks for the hot kernels live under `benches/`:
//! the QP and action filter, band extraction, a toy decay loop and a
//! two-robot rollout. Run with `cargo bench -p safeset-bench`.
