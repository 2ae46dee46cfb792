//! Context-free classification and divergence-based out-of-context scoring.
//!
//! An object is scored by how much the context-informed label distribution
//! (ConG) disagrees with a distribution computed from the object alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{train_epochs, GcnModel, TrainItem};
use crate::optim::{AdamW, AdamWConfig};
use crate::scene::{SceneGraph, Violation, GEOMETRY_DIM};
use crate::tensor::{Matrix, PROB_FLOOR};

pub const DEFAULT_FREE_WIDTHS: [usize; 2] = [64, 64];

/// Per-object classifier with no access to other objects.
///
/// It is a residual GCN evaluated with `Â = I`, so each node's output depends
/// only on its own appearance and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFreeClassifier {
    pub model: GcnModel,
    optimizer: AdamW,
}

impl ContextFreeClassifier {
    pub fn new(
        appearance_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        optimizer: AdamWConfig,
        seed: u64,
    ) -> Self {
        let model = GcnModel::new(appearance_dim + GEOMETRY_DIM, hidden, num_classes, seed);
        Self::from_model(model, optimizer)
    }

    pub fn from_model(model: GcnModel, optimizer: AdamWConfig) -> Self {
        Self {
            optimizer: AdamW::new(optimizer, model.params()),
            model,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    /// Class distribution for every node of `scene`, each computed in isolation.
    pub fn predict(&self, scene: &SceneGraph) -> Result<Matrix> {
        self.predict_inputs(&scene.repg_inputs()?)
    }

    /// Rows of `inputs` are independent objects.
    pub fn predict_inputs(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self
            .model
            .forward(&Matrix::identity(inputs.rows()), inputs)?
            .probs)
    }

    pub fn train(&mut self, scenes: &[SceneGraph], epochs: usize, seed: u64) -> Result<Vec<f64>> {
        let items = scenes
            .iter()
            .map(|s| {
                let inputs = s.repg_inputs()?;
                TrainItem::single(Matrix::identity(inputs.rows()), inputs, &s.labels()?)
            })
            .collect::<Result<Vec<_>>>()?;
        train_epochs(&mut self.model, &mut self.optimizer, &items, epochs, seed)
    }
}

/// One scored object, the unit of AUC evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OocRecord {
    pub scene_id: u64,
    pub node_index: usize,
    pub score: f64,
    pub truth: bool,
    pub violation: Violation,
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "not a probability distribution (sum {sum})"
        )));
    }
    Ok(())
}

/// `KL(p ‖ q) = Σ p_i ln(p_i / q_i)`, both arguments floored at 1e-12.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            op: "kl_divergence",
            left: (p.len(), 1),
            right: (q.len(), 1),
        });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let kl: f64 = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pi = pi.max(PROB_FLOOR);
            pi * (pi / qi.max(PROB_FLOOR)).ln()
        })
        .sum();
    // Flooring can push a near-zero divergence a hair below zero.
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// KL(free ‖ ctx).
    FreeToCtx,
    /// KL(ctx ‖ free).
    CtxToFree,
    /// Sum of both directions.
    #[default]
    Symmetric,
}

pub fn ooc_score(context_probs: &[f64], free_probs: &[f64], mode: KlMode) -> Result<f64> {
    Ok(match mode {
        KlMode::FreeToCtx => kl_divergence(free_probs, context_probs)?,
        KlMode::CtxToFree => kl_divergence(context_probs, free_probs)?,
        KlMode::Symmetric => {
            kl_divergence(free_probs, context_probs)? + kl_divergence(context_probs, free_probs)?
        }
    })
}

/// `score > threshold` for each record.
pub fn detect(records: &[OocRecord], threshold: f64) -> Vec<bool> {
    records.iter().map(|r| r.score > threshold).collect()
}

/// `1 − max(p)`: low confidence reads as more out-of-context.
pub fn softmax_confidence_baseline(free_probs: &[f64]) -> f64 {
    1.0 - free_probs.iter().copied().fold(0.0, f64::max)
}
