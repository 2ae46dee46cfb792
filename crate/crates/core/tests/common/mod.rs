//! Shared oracles for the integration and acceptance tests.

#![allow(dead_code)]

pub mod invariants;

use gcrn::gcn::{loss_and_gradients, GcnModel, Pass, TrainItem};
use gcrn::rng::SeededRng;
use gcrn::scene::normalize_adjacency;
use gcrn::tensor::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Mean cross-entropy over all targets, via a log-sum-exp of the logits, plus
/// the sign of every ReLU pre-activation. Independent of the library's softmax
/// and loss code.
pub fn loss_and_pattern(model: &GcnModel, item: &TrainItem) -> (f64, Vec<bool>) {
    let total = item.target_count() as f64;
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for pass in &item.passes {
        let fwd = model.forward(&item.adjacency, &pass.inputs).unwrap();
        for z in fwd.cache.pre_activations() {
            pattern.extend(z.as_slice().iter().map(|&v| v > 0.0));
        }
        for &(r, t) in &pass.targets {
            let row = fwd.logits.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
    }
    (loss / total, pattern)
}

#[derive(Debug, Default, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradReport {
    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding do not produce spurious large ratios.
pub const REL_FLOOR: f64 = 1e-6;

/// Central differences with step `h` against the analytic gradient.
///
/// `per_tensor` limits how many coordinates of each parameter tensor are
/// checked (randomly chosen); `None` checks every coordinate. A coordinate is
/// skipped when either perturbation flips any ReLU, since the loss is not
/// differentiable across the kink.
pub fn gradcheck(model: &GcnModel, item: &TrainItem, h: f64, per_tensor: Option<usize>, rng: &mut SeededRng) -> GradReport {
    let (_, grads) = loss_and_gradients(model, item).unwrap();
    let analytic: Vec<Vec<f64>> = grads.params().iter().map(|m| m.as_slice().to_vec()).collect();
    let (_, base_pattern) = loss_and_pattern(model, item);
    let mut report = GradReport::default();

    for (t, values) in analytic.iter().enumerate() {
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < values.len() => (0..k).map(|_| rng.random_range(0..values.len())).collect(),
            _ => (0..values.len()).collect(),
        };
        for k in coords {
            let mut plus = model.clone();
            plus.params_mut()[t].as_mut_slice()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[t].as_mut_slice()[k] -= h;
            let (loss_plus, pattern_plus) = loss_and_pattern(&plus, item);
            let (loss_minus, pattern_minus) = loss_and_pattern(&minus, item);
            if pattern_plus != base_pattern || pattern_minus != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (loss_plus - loss_minus) / (2.0 * h);
            let a = values[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("tensor {t} coord {k}: analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    report
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random symmetric graph on `n` nodes, normalized with self-loops.
pub fn random_adjacency(n: usize, rng: &mut SeededRng) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.6) {
                a.as_mut_slice()[i * n + j] = 1.0;
                a.as_mut_slice()[j * n + i] = 1.0;
            }
        }
    }
    normalize_adjacency(&a)
}

/// A random 3–6 node instance for `model`. With `masked`, the item has one
/// pass per node carrying loss only on that node, like ConG training.
pub fn random_item(model: &GcnModel, masked: bool, identity_adjacency: bool, rng: &mut SeededRng) -> TrainItem {
    let n = rng.random_range(3..=6);
    let classes = model.num_classes();
    let inputs = gaussian_matrix(n, model.input_dim(), rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let adjacency = if identity_adjacency {
        Matrix::identity(n)
    } else {
        random_adjacency(n, rng)
    };
    if !masked {
        return TrainItem::single(adjacency, inputs, &labels).unwrap();
    }
    let passes = (0..n)
        .map(|i| {
            let mut x = inputs.clone();
            x.row_mut(i).fill(0.0);
            Pass {
                inputs: x,
                targets: vec![(i, labels[i])],
            }
        })
        .collect();
    TrainItem { adjacency, passes }
}
