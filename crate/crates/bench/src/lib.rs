//! Criterion benchmarks for the curation stages live under `benches/`.
