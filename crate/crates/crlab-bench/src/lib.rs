//! Benchmark support crate. See benches/hot_paths.rs.
