//! Threshold-free evaluation of OOC scores, and classification accuracy split
//! by OOC flag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ooc::OocRecord;

fn class_counts(records: &[OocRecord]) -> Result<(u64, u64)> {
    let pos = records.iter().filter(|r| r.truth).count() as u64;
    let neg = records.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput(format!(
            "AUC needs both classes, got {pos} positive and {neg} negative records"
        )));
    }
    if records.iter().any(|r| r.score.is_nan()) {
        return Err(Error::DegenerateInput("NaN score".into()));
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC: `[#(pos > neg) + ½·#(pos = neg)] / (#pos · #neg)`.
///
/// Computed from mid-ranks in doubled integer arithmetic, so the numerator is
/// exact and the result equals the pairwise count to the last bit.
pub fn auc(records: &[OocRecord]) -> Result<f64> {
    let (pos, neg) = class_counts(records)?;
    let mut sorted: Vec<(f64, bool)> = records.iter().map(|r| (r.score, r.truth)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum over positives of 2·(mid-rank), ranks 1-based.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let tie = (j - i) as u64;
        let doubled_mid = 2 * i as u64 + tie + 1;
        let tied_pos = sorted[i..j].iter().filter(|(_, t)| *t).count() as u64;
        doubled_rank_sum += doubled_mid * tied_pos;
        i = j;
    }
    let doubled_u = doubled_rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / (2 * pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
}

/// ROC points for the rule `score >= threshold`, sweeping thresholds from
/// `+∞` (the `(0, 0)` point) down through every distinct score; the last
/// point is `(1, 1)`.
pub fn roc_curve(records: &[OocRecord]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(records)?;
    let mut sorted: Vec<(f64, bool)> = records.iter().map(|r| (r.score, r.truth)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        true_positive_rate: 0.0,
        false_positive_rate: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            true_positive_rate: tp as f64 / pos as f64,
            false_positive_rate: fp as f64 / neg as f64,
        });
    }
    Ok(points)
}

/// Trapezoid area under a ROC curve.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            (w[1].false_positive_rate - w[0].false_positive_rate)
                * (w[1].true_positive_rate + w[0].true_positive_rate)
                / 2.0
        })
        .sum()
}

/// Label accuracy split by OOC flag. A group with no members is reported as
/// `None` rather than 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Lower is better: a misclassified OOC object is a correct detection.
    pub ooc_accuracy: Option<f64>,
    pub non_ooc_accuracy: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub ooc_count: usize,
    pub non_ooc_count: usize,
}

pub fn accuracy_report(
    predictions: &[usize],
    truth: &[usize],
    ooc_flags: &[bool],
) -> Result<AccuracyReport> {
    if predictions.len() != truth.len() || truth.len() != ooc_flags.len() {
        return Err(Error::Shape {
            op: "accuracy_report",
            left: (predictions.len(), truth.len()),
            right: (ooc_flags.len(), 1),
        });
    }
    let (mut ooc_hit, mut ooc_n, mut in_hit, mut in_n) = (0usize, 0usize, 0usize, 0usize);
    for ((p, t), &flag) in predictions.iter().zip(truth).zip(ooc_flags) {
        let hit = usize::from(p == t);
        if flag {
            ooc_hit += hit;
            ooc_n += 1;
        } else {
            in_hit += hit;
            in_n += 1;
        }
    }
    let frac = |hit: usize, n: usize| (n > 0).then(|| hit as f64 / n as f64);
    Ok(AccuracyReport {
        ooc_accuracy: frac(ooc_hit, ooc_n),
        non_ooc_accuracy: frac(in_hit, in_n),
        overall_accuracy: frac(ooc_hit + in_hit, ooc_n + in_n),
        ooc_count: ooc_n,
        non_ooc_count: in_n,
    })
}
