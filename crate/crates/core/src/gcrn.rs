//! The dual-graph model: RepG predicts labels from appearance and geometry,
//! ConG predicts them from the other objects' labels and geometry. The two are
//! coupled by alternating training until their argmax predictions agree.
//!
//! ConG always masks the target node's own label: when predicting node `i`
//! the one-hot slot of row `i` is zeroed, so `i`'s prediction conditions only
//! on its neighbours' labels (plus every node's geometry). This costs one
//! forward pass per node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{train_epochs, GcnModel, Pass, TrainItem};
use crate::optim::{AdamW, AdamWConfig};
use crate::scene::{SceneGraph, GEOMETRY_DIM};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcrnConfig {
    pub hidden: Vec<usize>,
    pub optimizer: AdamWConfig,
}

impl Default for GcrnConfig {
    fn default() -> Self {
        Self {
            hidden: crate::gcn::DEFAULT_WIDTHS.to_vec(),
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub disagreement_threshold: f64,
    pub inner_epochs: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            disagreement_threshold: 0.01,
            inner_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmRecord {
    pub iteration: usize,
    pub repg_loss: f64,
    pub cong_loss: f64,
    /// Fraction of nodes where RepG and ConG argmax differ.
    pub disagreement: f64,
}

pub type EmHistory = Vec<EmRecord>;

/// Which half of an EM iteration just ran; passed to observers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmPhase {
    /// ConG fitted to ground-truth labels.
    ContextFit,
    /// RepG fitted to ConG's predictions.
    RepresentationMatch,
}

/// Where ConG's assumed neighbour labels come from at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    GroundTruth,
    RepgArgmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub repg_probs: Matrix,
    pub cong_probs: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gcrn {
    pub repg: GcnModel,
    pub cong: GcnModel,
    num_classes: usize,
    appearance_dim: usize,
    repg_opt: AdamW,
    cong_opt: AdamW,
    pretrained: bool,
}

impl Gcrn {
    pub fn new(num_classes: usize, appearance_dim: usize, config: &GcrnConfig, seed: u64) -> Self {
        use crate::rng::{stream, tags};
        use rand::RngCore;
        let repg_seed = stream(seed, tags::REPG_INIT).next_u64();
        let cong_seed = stream(seed, tags::CONG_INIT).next_u64();
        let repg = GcnModel::new(
            appearance_dim + GEOMETRY_DIM,
            &config.hidden,
            num_classes,
            repg_seed,
        );
        let cong = GcnModel::new(num_classes + GEOMETRY_DIM, &config.hidden, num_classes, cong_seed);
        Self::from_parts(repg, cong, num_classes, appearance_dim, config.optimizer)
    }

    /// Assembles a model from trained networks (e.g. loaded from a checkpoint).
    /// The result counts as pretrained.
    pub fn from_models(
        repg: GcnModel,
        cong: GcnModel,
        num_classes: usize,
        appearance_dim: usize,
        optimizer: AdamWConfig,
    ) -> Result<Self> {
        let mut g = Self::from_parts(repg, cong, num_classes, appearance_dim, optimizer);
        g.validate()?;
        g.pretrained = true;
        Ok(g)
    }

    fn from_parts(
        repg: GcnModel,
        cong: GcnModel,
        num_classes: usize,
        appearance_dim: usize,
        optimizer: AdamWConfig,
    ) -> Self {
        Self {
            repg_opt: AdamW::new(optimizer, repg.params()),
            cong_opt: AdamW::new(optimizer, cong.params()),
            repg,
            cong,
            num_classes,
            appearance_dim,
            pretrained: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, model: &GcnModel, input: usize| {
            if model.num_classes() != self.num_classes {
                return Err(Error::DimensionMismatch(format!(
                    "{what} predicts {} classes, expected {}",
                    model.num_classes(),
                    self.num_classes
                )));
            }
            if model.input_dim() != input {
                return Err(Error::DimensionMismatch(format!(
                    "{what} expects {} inputs, expected {input}",
                    model.input_dim()
                )));
            }
            Ok(())
        };
        check("repg", &self.repg, self.appearance_dim + GEOMETRY_DIM)?;
        check("cong", &self.cong, self.num_classes + GEOMETRY_DIM)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance_dim
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn optimizer_config(&self) -> AdamWConfig {
        self.repg_opt.config
    }

    /// Supervised RepG training on ground-truth labels. ConG is not touched.
    pub fn pretrain_repg(
        &mut self,
        scenes: &[SceneGraph],
        epochs: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let items = scenes
            .iter()
            .map(|s| TrainItem::single(s.adjacency_norm().clone(), s.repg_inputs()?, &s.labels()?))
            .collect::<Result<Vec<_>>>()?;
        let history = train_epochs(&mut self.repg, &mut self.repg_opt, &items, epochs, seed)?;
        self.pretrained = true;
        Ok(history)
    }

    pub fn repg_probs(&self, scene: &SceneGraph) -> Result<Matrix> {
        Ok(self
            .repg
            .forward(scene.adjacency_norm(), &scene.repg_inputs()?)?
            .probs)
    }

    pub fn repg_argmax(&self, scene: &SceneGraph) -> Result<Vec<usize>> {
        let probs = self.repg_probs(scene)?;
        Ok((0..probs.rows()).map(|r| probs.row_argmax(r)).collect())
    }

    /// ConG input matrix for target node `target`: its own one-hot label slot is zeroed.
    pub fn masked_cong_inputs(
        &self,
        scene: &SceneGraph,
        assumed_labels: &[usize],
        target: usize,
    ) -> Result<Matrix> {
        let mut inputs = scene.cong_inputs(assumed_labels, self.num_classes)?;
        inputs.row_mut(target)[..self.num_classes].fill(0.0);
        Ok(inputs)
    }

    /// Per-node class distribution from context, one masked forward pass per node.
    pub fn cong_forward(&self, scene: &SceneGraph, assumed_labels: &[usize]) -> Result<Matrix> {
        let n = scene.len();
        let mut out = Matrix::zeros(n, self.num_classes);
        for i in 0..n {
            let inputs = self.masked_cong_inputs(scene, assumed_labels, i)?;
            let fwd = self.cong.forward(scene.adjacency_norm(), &inputs)?;
            out.row_mut(i).copy_from_slice(fwd.probs.row(i));
        }
        Ok(out)
    }

    /// Pseudo-likelihood training item: one masked pass per node, each carrying
    /// loss only on its target row.
    fn cong_item(&self, scene: &SceneGraph, assumed: &[usize], targets: &[usize]) -> Result<TrainItem> {
        let passes = (0..scene.len())
            .map(|i| {
                Ok(Pass {
                    inputs: self.masked_cong_inputs(scene, assumed, i)?,
                    targets: vec![(i, targets[i])],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainItem {
            adjacency: scene.adjacency_norm().clone(),
            passes,
        })
    }

    /// ConG fitted to ground truth: neighbours' true labels in, own true label out.
    /// RepG is not touched. Returns the last epoch's mean loss.
    pub fn fit_cong_to_truth(&mut self, scenes: &[SceneGraph], epochs: usize, seed: u64) -> Result<f64> {
        let items = scenes
            .iter()
            .map(|s| {
                let labels = s.labels()?;
                self.cong_item(s, &labels, &labels)
            })
            .collect::<Result<Vec<_>>>()?;
        let hist = train_epochs(&mut self.cong, &mut self.cong_opt, &items, epochs, seed)?;
        Ok(hist.last().copied().unwrap_or(f64::NAN))
    }

    /// RepG fitted to ConG's argmax, where ConG sees RepG's current argmax as
    /// neighbour labels. ConG is not touched. Returns the last epoch's mean loss.
    pub fn match_repg_to_cong(&mut self, scenes: &[SceneGraph], epochs: usize, seed: u64) -> Result<f64> {
        let items = scenes
            .iter()
            .map(|s| {
                let assumed = self.repg_argmax(s)?;
                let cong = self.cong_forward(s, &assumed)?;
                let targets: Vec<usize> = (0..cong.rows()).map(|r| cong.row_argmax(r)).collect();
                TrainItem::single(s.adjacency_norm().clone(), s.repg_inputs()?, &targets)
            })
            .collect::<Result<Vec<_>>>()?;
        let hist = train_epochs(&mut self.repg, &mut self.repg_opt, &items, epochs, seed)?;
        Ok(hist.last().copied().unwrap_or(f64::NAN))
    }

    /// Fraction of nodes where argmax(RepG) differs from argmax(ConG), ConG
    /// being fed RepG's argmax labels.
    pub fn disagreement(&self, scenes: &[SceneGraph]) -> Result<f64> {
        let mut differ = 0usize;
        let mut total = 0usize;
        for s in scenes {
            let repg = self.repg_argmax(s)?;
            let cong = self.cong_forward(s, &repg)?;
            for (i, &r) in repg.iter().enumerate() {
                differ += usize::from(cong.row_argmax(i) != r);
            }
            total += s.len();
        }
        Ok(if total == 0 { 0.0 } else { differ as f64 / total as f64 })
    }

    pub fn em_train(&mut self, scenes: &[SceneGraph], config: &EmConfig, seed: u64) -> Result<EmHistory> {
        self.em_train_observed(scenes, config, seed, |_, _, _| {})
    }

    /// Alternating training. `observer` sees the model before and after each
    /// phase of every iteration.
    pub fn em_train_observed(
        &mut self,
        scenes: &[SceneGraph],
        config: &EmConfig,
        seed: u64,
        mut observer: impl FnMut(EmPhase, &Gcrn, &Gcrn),
    ) -> Result<EmHistory> {
        if !self.pretrained {
            return Err(Error::State("RepG must be pretrained before EM".into()));
        }
        let mut history = Vec::new();
        for iteration in 1..=config.max_iterations {
            let phase_seed = |phase: u64| seed ^ ((iteration as u64) << 32) ^ phase;

            let before = self.clone();
            let cong_loss = self.fit_cong_to_truth(scenes, config.inner_epochs, phase_seed(1))?;
            observer(EmPhase::ContextFit, &before, self);

            let before = self.clone();
            let repg_loss = self.match_repg_to_cong(scenes, config.inner_epochs, phase_seed(2))?;
            observer(EmPhase::RepresentationMatch, &before, self);

            let disagreement = self.disagreement(scenes)?;
            history.push(EmRecord {
                iteration,
                repg_loss,
                cong_loss,
                disagreement,
            });
            if disagreement <= config.disagreement_threshold {
                break;
            }
        }
        Ok(history)
    }

    pub fn predict(&self, scene: &SceneGraph, source: LabelSource) -> Result<Prediction> {
        let repg_probs = self.repg_probs(scene)?;
        let assumed = match source {
            LabelSource::GroundTruth => scene.labels()?,
            LabelSource::RepgArgmax => (0..repg_probs.rows()).map(|r| repg_probs.row_argmax(r)).collect(),
        };
        let cong_probs = self.cong_forward(scene, &assumed)?;
        Ok(Prediction {
            repg_probs,
            cong_probs,
        })
    }
}
