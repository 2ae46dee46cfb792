//! Generates a small synthetic world and dataset, prints summary statistics
//! and writes the dataset as JSON.
//!
//!     cargo run --example synth_dataset [-- OUT.json]

use std::collections::BTreeMap;

use gcrn::dataset::write_dataset;
use gcrn::synth::{generate_dataset, generate_world, validate_dataset, GenConfig, WorldParams};

fn main() -> gcrn::Result<()> {
    let world = generate_world(&WorldParams::default(), 7)?;
    println!("world: {} classes in {} groups", world.num_classes, world.groups.len());
    for (g, members) in world.groups.iter().enumerate() {
        println!("  group {g}: classes {members:?}");
    }

    let config = GenConfig {
        seed: 7,
        num_train: 200,
        num_test: 100,
        ..GenConfig::default()
    };
    let dataset = generate_dataset(&world, &config)?;
    validate_dataset(&dataset)?;

    let objects: usize = dataset.test.iter().map(|s| s.len()).sum();
    let mut kinds = BTreeMap::new();
    for inj in &dataset.manifest {
        *kinds.entry(inj.kind.as_str()).or_insert(0) += 1;
    }
    println!(
        "{} train scenes, {} test scenes holding {objects} objects",
        dataset.train.len(),
        dataset.test.len()
    );
    println!("injected violations: {kinds:?}");

    if let Some(path) = std::env::args().nth(1) {
        write_dataset(&path, &dataset)?;
        println!("wrote {path}");
    }
    Ok(())
}
