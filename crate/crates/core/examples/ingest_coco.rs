//! Converts COCO-style annotations into scene graphs, gives them oracle
//! appearance features from a synthetic world, and corrupts a share of the
//! labels.
//!
//!     cargo run --example ingest_coco [-- ANNOTATIONS.json]

use gcrn::ingest::{attach_oracle_appearance, corrupt_labels, parse_coco_annotations, IngestOptions};
use gcrn::rng;
use gcrn::synth::{generate_world, WorldParams};

const SAMPLE: &str = r#"{
  "images": [{"id": 7, "width": 640, "height": 480}, {"id": 9, "width": 500, "height": 500}],
  "annotations": [
    {"image_id": 7, "bbox": [10, 20, 200, 150], "category_id": 18},
    {"image_id": 7, "bbox": [300, 40, 80, 60], "category_id": 62},
    {"image_id": 7, "bbox": [50, 50, 0, 10], "category_id": 18},
    {"image_id": 9, "bbox": [0, 0, 250, 500], "category_id": 1}
  ],
  "categories": [{"id": 1, "name": "person"}, {"id": 18, "name": "dog"}, {"id": 62, "name": "chair"}]
}"#;

fn main() -> gcrn::Result<()> {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => SAMPLE.as_bytes().to_vec(),
    };

    if let Err(e) = parse_coco_annotations(&bytes, IngestOptions::default()) {
        println!("strict parse rejected the input: {e}");
    }
    let parsed = parse_coco_annotations(&bytes, IngestOptions { lenient: true })?;
    println!("lenient parse kept {} scenes, skipped {} boxes", parsed.scenes.len(), parsed.skipped);
    for c in &parsed.remap {
        println!("  category {} ({}) -> class {}", c.category_id, c.name, c.class_index);
    }

    let world = generate_world(
        &WorldParams {
            num_classes: parsed.remap.len().max(2),
            num_groups: 2,
            ..WorldParams::default()
        },
        0,
    )?;
    let scenes = attach_oracle_appearance(&parsed.scenes, &world, &mut rng::seeded(1))?;
    let (_, flips) = corrupt_labels(&scenes, world.num_classes, 0.5, &mut rng::seeded(3))?;
    for scene in &scenes {
        println!("scene {}: {} objects, labels {:?}", scene.id, scene.len(), scene.labels()?);
    }
    for f in &flips {
        println!("flipped scene {} node {}: {} -> {}", f.scene_id, f.node_index, f.original, f.corrupted);
    }
    Ok(())
}
