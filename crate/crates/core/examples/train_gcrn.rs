//! Trains a reduced-width GCRN on a small synthetic dataset, runs EM until the
//! two graphs agree, and scores the test split against a context-free
//! classifier.
//!
//!     cargo run --release --example train_gcrn

use gcrn::gcrn::{EmConfig, Gcrn, GcrnConfig, LabelSource};
use gcrn::metrics::auc;
use gcrn::ooc::{ooc_score, ContextFreeClassifier, KlMode, OocRecord};
use gcrn::optim::AdamWConfig;
use gcrn::synth::{generate_dataset, generate_world, GenConfig, WorldParams};

fn main() -> gcrn::Result<()> {
    let world = generate_world(&WorldParams::default(), 3)?;
    let data = generate_dataset(
        &world,
        &GenConfig {
            seed: 3,
            num_train: 300,
            num_test: 150,
            ..GenConfig::default()
        },
    )?;

    let config = GcrnConfig {
        hidden: vec![64, 32],
        ..GcrnConfig::default()
    };
    let mut model = Gcrn::new(world.num_classes, world.appearance_dim, &config, 3);
    let pretrain = model.pretrain_repg(&data.train, 5, 30)?;
    println!("RepG pretraining loss per epoch: {pretrain:.3?}");

    let history = model.em_train(&data.train, &EmConfig::default(), 31)?;
    for e in &history {
        println!(
            "EM {:>2}: ConG loss {:.3}, RepG loss {:.3}, disagreement {:.3}",
            e.iteration, e.cong_loss, e.repg_loss, e.disagreement
        );
    }

    let mut free = ContextFreeClassifier::new(world.appearance_dim, &[64, 64], world.num_classes, AdamWConfig::default(), 32);
    free.train(&data.train, 20, 33)?;

    let mut records = Vec::new();
    for scene in &data.test {
        let context = model.predict(scene, LabelSource::GroundTruth)?.cong_probs;
        let context_free = free.predict(scene)?;
        for (i, node) in scene.nodes().iter().enumerate() {
            records.push(OocRecord {
                scene_id: scene.id,
                node_index: i,
                score: ooc_score(context.row(i), context_free.row(i), KlMode::Symmetric)?,
                truth: node.is_ooc,
                violation: node.violation,
            });
        }
    }
    println!("GCRN AUC on {} test objects: {:.3}", records.len(), auc(&records)?);
    Ok(())
}
