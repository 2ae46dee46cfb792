//! Residual graph-convolution network with a hand-written backward pass.
//!
//! Layer rule, for normalized adjacency `Â`:
//!
//! ```text
//! Z^l     = Â H^l W^l + b^l
//! H^{l+1} = ReLU(Z^l) + R^l(H^l)      R^l = H·P^l if widths differ, identity otherwise
//! logits  = H^L W_head + b_head
//! ```
//!
//! The same model type backs RepG, ConG and (with `Â = I`) the context-free
//! classifier.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamW;
use crate::rng;
use crate::tensor::{masked_cross_entropy, softmax_rows, Matrix};

/// Hidden widths of the four graph-convolution layers.
pub const DEFAULT_WIDTHS: [usize; 4] = [256, 128, 64, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayerParams {
    pub weight: Matrix,
    /// 1 × out_dim.
    pub bias: Matrix,
    /// Residual projection, present only when in_dim != out_dim.
    pub projection: Option<Matrix>,
}

impl GcnLayerParams {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    pub layers: Vec<GcnLayerParams>,
    pub head_weight: Matrix,
    pub head_bias: Matrix,
}

fn glorot(rng: &mut rng::SeededRng, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("length matches by construction")
}

impl GcnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], num_classes: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut in_dim = input_dim;
        for &out_dim in hidden {
            let weight = glorot(&mut rng, in_dim, out_dim);
            let projection = (in_dim != out_dim).then(|| glorot(&mut rng, in_dim, out_dim));
            layers.push(GcnLayerParams {
                weight,
                bias: Matrix::zeros(1, out_dim),
                projection,
            });
            in_dim = out_dim;
        }
        Self {
            layers,
            head_weight: glorot(&mut rng, in_dim, num_classes),
            head_bias: Matrix::zeros(1, num_classes),
        }
    }

    /// Same structure, every value zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| GcnLayerParams {
                    weight: z(&l.weight),
                    bias: z(&l.bias),
                    projection: l.projection.as_ref().map(z),
                })
                .collect(),
            head_weight: z(&self.head_weight),
            head_bias: z(&self.head_bias),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map_or(self.head_weight.rows(), |l| l.in_dim())
    }

    pub fn num_classes(&self) -> usize {
        self.head_weight.cols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_dim()).collect()
    }

    /// All parameter tensors in a fixed order.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(self.layers.len() * 3 + 2);
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(p) = &l.projection {
                out.push(p);
            }
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(self.layers.len() * 3 + 2);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(p) = &mut l.projection {
                out.push(p);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Checks that consecutive layer widths chain, biases are row vectors and
    /// projections exist exactly where widths change.
    pub fn validate_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::DimensionMismatch(msg));
        let mut width = self.input_dim();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.in_dim() != width {
                return bad(format!("layer {l} takes {} inputs, previous emits {width}", layer.in_dim()));
            }
            if layer.bias.shape() != (1, layer.out_dim()) {
                return bad(format!("layer {l} bias shape {:?}", layer.bias.shape()));
            }
            let needs_projection = layer.in_dim() != layer.out_dim();
            match &layer.projection {
                Some(p) if !needs_projection || p.shape() != layer.weight.shape() => {
                    return bad(format!("layer {l} projection shape {:?}", p.shape()));
                }
                None if needs_projection => return bad(format!("layer {l} is missing its projection")),
                _ => {}
            }
            width = layer.out_dim();
        }
        if self.head_weight.rows() != width || self.head_bias.shape() != (1, self.head_weight.cols()) {
            return bad("head shape".into());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Checks that two models have identical layer shapes.
    pub fn same_shape(&self, other: &GcnModel) -> bool {
        let a = self.params();
        let b = other.params();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }

    pub fn forward(&self, adjacency: &Matrix, inputs: &Matrix) -> Result<Forward> {
        let n = inputs.rows();
        if adjacency.shape() != (n, n) {
            return Err(Error::Shape {
                op: "gcn_forward adjacency",
                left: adjacency.shape(),
                right: inputs.shape(),
            });
        }
        if inputs.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "gcn_forward input",
                left: inputs.shape(),
                right: (self.input_dim(), 0),
            });
        }

        let mut hidden = Vec::with_capacity(self.layers.len() + 1);
        let mut aggregated = Vec::with_capacity(self.layers.len());
        let mut pre_activation = Vec::with_capacity(self.layers.len());
        let mut h = inputs.clone();
        for layer in &self.layers {
            let agg = adjacency.matmul(&h)?;
            let mut z = agg.matmul(&layer.weight)?;
            z.add_row_bias(&layer.bias)?;
            let mut next = z.map(|v| v.max(0.0));
            match &layer.projection {
                Some(p) => next.add_assign(&h.matmul(p)?)?,
                None => next.add_assign(&h)?,
            }
            hidden.push(h);
            aggregated.push(agg);
            pre_activation.push(z);
            h = next;
        }
        let mut logits = h.matmul(&self.head_weight)?;
        logits.add_row_bias(&self.head_bias)?;
        hidden.push(h);
        let probs = softmax_rows(&logits);
        Ok(Forward {
            logits,
            probs,
            cache: ForwardCache {
                adjacency: adjacency.clone(),
                hidden,
                aggregated,
                pre_activation,
            },
        })
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d logits`.
    ///
    /// The returned model holds gradients in place of parameter values.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Matrix) -> Result<GcnModel> {
        self.check_cache(cache)?;
        let n = cache.adjacency.rows();
        if grad_logits.shape() != (n, self.num_classes()) {
            return Err(Error::Shape {
                op: "gcn_backward grad_logits",
                left: grad_logits.shape(),
                right: (n, self.num_classes()),
            });
        }

        let mut grads = self.zeros_like();
        let last = cache.hidden.last().expect("cache holds at least the input");
        grads.head_weight = last.t_matmul(grad_logits)?;
        grads.head_bias = grad_logits.column_sums();
        let mut d_h = grad_logits.matmul_t(&self.head_weight)?;

        let adjacency_t = cache.adjacency.transpose();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let d_out = d_h;
            let z = &cache.pre_activation[l];
            let mut d_z = d_out.clone();
            for (d, &zv) in d_z.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if zv <= 0.0 {
                    *d = 0.0;
                }
            }
            let g = &mut grads.layers[l];
            g.weight = cache.aggregated[l].t_matmul(&d_z)?;
            g.bias = d_z.column_sums();
            let d_agg = d_z.matmul_t(&layer.weight)?;
            let mut d_in = adjacency_t.matmul(&d_agg)?;
            match &layer.projection {
                Some(p) => {
                    g.projection = Some(cache.hidden[l].t_matmul(&d_out)?);
                    d_in.add_assign(&d_out.matmul_t(p)?)?;
                }
                None => d_in.add_assign(&d_out)?,
            }
            d_h = d_in;
        }
        Ok(grads)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let stale = |why: String| Error::Validation(format!("forward cache does not match model: {why}"));
        if cache.hidden.len() != self.layers.len() + 1
            || cache.aggregated.len() != self.layers.len()
            || cache.pre_activation.len() != self.layers.len()
        {
            return Err(stale(format!(
                "cache has {} activations, model has {} layers",
                cache.hidden.len(),
                self.layers.len()
            )));
        }
        let n = cache.adjacency.rows();
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.hidden[l].shape() != (n, layer.in_dim())
                || cache.pre_activation[l].shape() != (n, layer.out_dim())
            {
                return Err(stale(format!("layer {l} shape")));
            }
        }
        if cache.hidden[self.layers.len()].cols() != self.head_weight.rows() {
            return Err(stale("head input width".into()));
        }
        Ok(())
    }

    /// Adds `other` into `self` elementwise (gradient accumulation).
    pub fn accumulate(&mut self, other: &GcnModel) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Validation("gradient structure mismatch".into()));
        }
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.scale(factor);
        }
    }
}

pub struct Forward {
    pub logits: Matrix,
    pub probs: Matrix,
    pub cache: ForwardCache,
}

/// Activations retained by [`GcnModel::forward`] for the backward pass.
pub struct ForwardCache {
    adjacency: Matrix,
    /// `H^0 .. H^L`.
    hidden: Vec<Matrix>,
    /// `Â H^l`.
    aggregated: Vec<Matrix>,
    /// `Z^l`.
    pre_activation: Vec<Matrix>,
}

impl ForwardCache {
    /// Pre-activations per layer; useful for avoiding ReLU kinks in gradient checks.
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre_activation
    }
}

/// One forward pass worth of supervised signal: node inputs plus the
/// `(row, label)` pairs that carry loss.
#[derive(Debug, Clone)]
pub struct Pass {
    pub inputs: Matrix,
    pub targets: Vec<(usize, usize)>,
}

/// A training unit: one scene graph, possibly seen through several input
/// variants (ConG uses one pass per masked target node). Produces exactly one
/// optimizer step.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub adjacency: Matrix,
    pub passes: Vec<Pass>,
}

impl TrainItem {
    pub fn single(adjacency: Matrix, inputs: Matrix, labels: &[usize]) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::Validation(format!(
                "{} targets for {} nodes",
                labels.len(),
                inputs.rows()
            )));
        }
        Ok(Self {
            adjacency,
            passes: vec![Pass {
                inputs,
                targets: labels.iter().copied().enumerate().collect(),
            }],
        })
    }

    pub fn target_count(&self) -> usize {
        self.passes.iter().map(|p| p.targets.len()).sum()
    }
}

/// Mean cross-entropy over every target of `item`, and its parameter gradients.
pub fn loss_and_gradients(model: &GcnModel, item: &TrainItem) -> Result<(f64, GcnModel)> {
    let total = item.target_count();
    if total == 0 {
        return Err(Error::Validation("training item has no targets".into()));
    }
    let mut grads = model.zeros_like();
    let mut loss = 0.0;
    for pass in &item.passes {
        if pass.targets.is_empty() {
            continue;
        }
        let fwd = model.forward(&item.adjacency, &pass.inputs)?;
        let (pass_loss, mut grad_logits) = masked_cross_entropy(&fwd.probs, &pass.targets)?;
        // Reweight from per-pass mean to mean over the whole item.
        let w = pass.targets.len() as f64 / total as f64;
        grad_logits.scale(w);
        loss += pass_loss * w;
        grads.accumulate(&model.backward(&fwd.cache, &grad_logits)?)?;
    }
    Ok((loss, grads))
}

/// Runs `epochs` seeded shuffles over `items`, one optimizer step per item.
///
/// Returns the mean item loss of each epoch (measured before each step).
pub fn train_epochs(
    model: &mut GcnModel,
    optimizer: &mut AdamW,
    items: &[TrainItem],
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = loss_and_gradients(model, &items[i])?;
            optimizer.step(model.params_mut(), grads.params())?;
            total += loss;
        }
        history.push(total / items.len().max(1) as f64);
    }
    Ok(history)
}
