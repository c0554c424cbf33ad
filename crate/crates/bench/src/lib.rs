//! Placeholder library target; benchmarks live under benches/.
