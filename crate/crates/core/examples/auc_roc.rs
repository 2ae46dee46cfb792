//! Scores a hand-made set of detections and prints the AUC, the ROC curve and
//! the detections at a fixed threshold.
//!
//!     cargo run --example auc_roc

use gcrn::metrics::{auc, roc_area, roc_curve};
use gcrn::ooc::{detect, OocRecord};
use gcrn::scene::Violation;

fn main() -> gcrn::Result<()> {
    let scored = [(2.4, true), (1.9, false), (1.9, true), (0.7, false), (0.3, true), (0.1, false), (0.1, false)];
    let records: Vec<OocRecord> = scored
        .iter()
        .enumerate()
        .map(|(i, &(score, truth))| OocRecord {
            scene_id: 0,
            node_index: i,
            score,
            truth,
            violation: if truth { Violation::Cooccurrence } else { Violation::None },
        })
        .collect();

    let curve = roc_curve(&records)?;
    println!("threshold    TPR    FPR");
    for p in &curve {
        println!("{:>9.2} {:>6.3} {:>6.3}", p.threshold, p.true_positive_rate, p.false_positive_rate);
    }
    println!("rank AUC {:.4}, trapezoid area {:.4}", auc(&records)?, roc_area(&curve));

    let flagged = detect(&records, 1.0);
    println!("flagged at score >= 1.0: {flagged:?}");
    Ok(())
}
