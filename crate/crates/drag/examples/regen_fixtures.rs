//! Example: regenerate the shipped offline fixture bundle.
//!
//! Rebuilds `fixtures/worked/` (dataset, privacy records, scripted teacher
//! and student fixtures, and a ready-to-run config) from the in-code corpus.
//! The build is byte-stable; a test fails if the shipped copy drifts.
//!
//! Run: `cargo run --example regen_fixtures`

use drag::fixtures::{shipped_fixture_path, write_fixture_bundle};

fn main() -> anyhow::Result<()> {
    let dir = shipped_fixture_path("worked");
    let written = write_fixture_bundle(&dir)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    println!("\nrun the bundle with:");
    println!(
        "  cargo run -- eval --config {}",
        dir.join("eval.toml").display()
    );
    Ok(())
}
