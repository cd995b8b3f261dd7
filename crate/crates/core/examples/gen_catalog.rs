//! Regenerates the embedded catalog alist files.
//!
//! Usage: cargo run -p sap-core --example gen_catalog [-- <out-dir>]

use std::path::PathBuf;

use sap_core::alist::write_alist;
use sap_core::catalog::construct::build_all;

fn main() -> std::io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/catalog/v1"));
    std::fs::create_dir_all(&dir)?;
    for c in build_all() {
        let path = dir.join(format!("{}.alist", c.name));
        std::fs::write(&path, write_alist(&c.pcm))?;
        println!(
            "{} n={} m={} -> {}",
            c.name,
            c.pcm.n(),
            c.pcm.m(),
            path.display()
        );
    }
    Ok(())
}
