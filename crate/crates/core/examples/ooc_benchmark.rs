//! Runs the reference synthetic benchmark end to end and prints the result
//! tables.
//!
//!     cargo run --release --example ooc_benchmark [-- CONFIG.toml]

use std::time::Instant;

use gcrn::experiment::{render_tables, run_experiment, ExperimentConfig};

fn main() -> gcrn::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    let start = Instant::now();
    let out = run_experiment(&config)?;
    println!("{}", render_tables(&out.report));
    println!("finished in {:.1?}", start.elapsed());
    Ok(())
}
