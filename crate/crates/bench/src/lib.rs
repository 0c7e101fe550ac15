//! Benchmarks live in `benches/`; this crate only locates the bundled scenarios.

use std::path::PathBuf;

pub fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}
