//! End-to-end benchmark: generate a synthetic dataset, train GCRN and the
//! context-free classifier, score the test split and summarize the scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::GcnModel;
use crate::gcrn::{EmConfig, EmHistory, EmPhase, Gcrn, GcrnConfig, LabelSource};
use crate::ingest::corrupt_labels;
use crate::metrics::{accuracy_report, auc, roc_curve, AccuracyReport, RocPoint};
use crate::ooc::{ooc_score, softmax_confidence_baseline, ContextFreeClassifier, KlMode, OocRecord, DEFAULT_FREE_WIDTHS};
use crate::optim::AdamWConfig;
use crate::rng::{self, tags};
use crate::scene::{SceneGraph, Violation};
use crate::tensor::Matrix;
use crate::synth::{generate_dataset, generate_world, Dataset, GenConfig, ViolationMix, WorldParams};

/// Which labels ConG is given for the neighbours of each test object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Ground-truth boxes and labels.
    OracleLabels,
    /// Ground-truth boxes with labels corrupted at `flip_rate`.
    PredLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Divergence between ConG and the context-free classifier.
    Gcrn,
    /// Divergence between a RepG trained without ConG and the context-free
    /// classifier.
    NoCong,
    /// One minus the context-free classifier's top probability.
    Softmax,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gcrn, Method::NoCong, Method::Softmax];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub num_train: usize,
    pub num_test: usize,
    pub ooc_fraction: f64,
    pub violation_mix: ViolationMix,
    pub size_scale_range: (f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            num_train: g.num_train,
            num_test: g.num_test,
            ooc_fraction: g.ooc_fraction,
            violation_mix: g.violation_mix,
            size_scale_range: g.size_scale_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub free_hidden: Vec<usize>,
    pub optimizer: AdamWConfig,
    pub pretrain_epochs: usize,
    pub free_epochs: usize,
    pub em: EmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: crate::gcn::DEFAULT_WIDTHS.to_vec(),
            free_hidden: DEFAULT_FREE_WIDTHS.to_vec(),
            optimizer: AdamWConfig::default(),
            pretrain_epochs: 5,
            free_epochs: 20,
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub modes: Vec<Mode>,
    /// Score with the two baselines as well as GCRN.
    pub baselines: bool,
    pub kl: KlMode,
    /// Label flip probability used by `Mode::PredLabels`.
    pub flip_rate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            modes: vec![Mode::OracleLabels, Mode::PredLabels],
            baselines: true,
            kl: KlMode::Symmetric,
            flip_rate: 0.1,
        }
    }
}

impl EvalConfig {
    pub fn methods(&self) -> Vec<Method> {
        if self.baselines {
            Method::ALL.to_vec()
        } else {
            vec![Method::Gcrn]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub world: WorldParams,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn unknown_keys(given: &toml::Table, reference: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in given {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (value, reference.get(key)) {
            (_, None) => out.push(path),
            (toml::Value::Table(g), Some(toml::Value::Table(r))) => unknown_keys(g, r, &path, out),
            _ => {}
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML. Every key not present in the default configuration is
    /// reported at once.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let given: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let reference = toml::Table::try_from(ExperimentConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&given, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::UnknownConfigKeys(unknown));
        }
        let config: ExperimentConfig = given.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            num_train: self.data.num_train,
            num_test: self.data.num_test,
            ooc_fraction: self.data.ooc_fraction,
            violation_mix: self.data.violation_mix,
            size_scale_range: self.data.size_scale_range,
        }
    }

    pub fn gcrn_config(&self) -> GcrnConfig {
        GcrnConfig {
            hidden: self.train.hidden.clone(),
            optimizer: self.train.optimizer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.eval.flip_rate) {
            return Err(Error::Config(format!("flip_rate {} outside [0, 1]", self.eval.flip_rate)));
        }
        if self.train.hidden.is_empty() || self.train.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be non-empty and positive".into()));
        }
        if self.train.free_hidden.contains(&0) {
            return Err(Error::Config("free_hidden widths must be positive".into()));
        }
        if self.world.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }
}

fn stage_seed(seed: u64, tag: u64) -> u64 {
    rng::stream(seed, tag).next_u64()
}

pub fn build_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let world = generate_world(&config.world, stage_seed(config.seed, tags::WORLD))?;
    generate_dataset(&world, &config.gen_config())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub gcrn: Gcrn,
    /// RepG as it stood after supervised pretraining, before ConG entered.
    /// This is the representation graph of the no-ConG baseline.
    pub repg_only: GcnModel,
    pub free: ContextFreeClassifier,
    pub pretrain_losses: Vec<f64>,
    pub em_history: EmHistory,
    pub free_losses: Vec<f64>,
}

pub fn train_models(config: &ExperimentConfig, train: &[SceneGraph]) -> Result<TrainedModels> {
    train_models_observed(config, train, |_, _, _| {})
}

/// As [`train_models`], passing `observer` to every EM phase.
pub fn train_models_observed(
    config: &ExperimentConfig,
    train: &[SceneGraph],
    observer: impl FnMut(EmPhase, &Gcrn, &Gcrn),
) -> Result<TrainedModels> {
    let seed = config.seed;
    let num_classes = config.world.num_classes;
    let appearance_dim = config.world.appearance_dim;

    let mut gcrn = Gcrn::new(num_classes, appearance_dim, &config.gcrn_config(), seed);
    let pretrain_losses = gcrn.pretrain_repg(train, config.train.pretrain_epochs, stage_seed(seed, tags::PRETRAIN))?;
    let repg_only = gcrn.repg.clone();
    let em_history = gcrn.em_train_observed(train, &config.train.em, stage_seed(seed, tags::EM), observer)?;

    let mut free = ContextFreeClassifier::new(
        appearance_dim,
        &config.train.free_hidden,
        num_classes,
        config.train.optimizer,
        stage_seed(seed, tags::FREE_INIT),
    );
    let free_losses = free.train(train, config.train.free_epochs, stage_seed(seed, tags::FREE_TRAIN))?;

    Ok(TrainedModels {
        gcrn,
        repg_only,
        free,
        pretrain_losses,
        em_history,
        free_losses,
    })
}

impl TrainedModels {
    pub fn repg_only_probs(&self, scene: &SceneGraph) -> Result<Matrix> {
        Ok(self.repg_only.forward(scene.adjacency_norm(), &scene.repg_inputs()?)?.probs)
    }
}

/// The test scenes as seen under `mode`. Corruption draws from its own stream,
/// so it does not depend on which methods are scored.
pub fn mode_scenes(test: &[SceneGraph], mode: Mode, num_classes: usize, flip_rate: f64, seed: u64) -> Result<Vec<SceneGraph>> {
    match mode {
        Mode::OracleLabels => Ok(test.to_vec()),
        Mode::PredLabels => {
            let mut r = rng::stream(seed, tags::LABEL_NOISE);
            Ok(corrupt_labels(test, num_classes, flip_rate, &mut r)?.0)
        }
    }
}

/// One record per test object. Labels given to ConG are whatever the scenes
/// carry, so corrupted scenes yield pred-labels scores.
pub fn score_scenes(models: &TrainedModels, scenes: &[SceneGraph], method: Method, kl: KlMode) -> Result<Vec<OocRecord>> {
    let mut records = Vec::new();
    for scene in scenes {
        let free = models.free.predict(scene)?;
        let reference = match method {
            Method::Gcrn => Some(models.gcrn.predict(scene, LabelSource::GroundTruth)?.cong_probs),
            Method::NoCong => Some(models.repg_only_probs(scene)?),
            Method::Softmax => None,
        };
        for (i, node) in scene.nodes().iter().enumerate() {
            let score = match &reference {
                Some(probs) => ooc_score(probs.row(i), free.row(i), kl)?,
                None => softmax_confidence_baseline(free.row(i)),
            };
            records.push(OocRecord {
                scene_id: scene.id,
                node_index: i,
                score,
                truth: node.is_ooc,
                violation: node.violation,
            });
        }
    }
    Ok(records)
}

/// Scored records for one (mode, method) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSet {
    pub mode: Mode,
    pub method: Method,
    pub records: Vec<OocRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub mode: Mode,
    pub method: Method,
    pub auc: f64,
    /// AUC restricted to one violation kind against all in-context objects.
    pub auc_by_violation: BTreeMap<Violation, f64>,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    pub method: Method,
    pub report: AccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub results: Vec<MethodResult>,
    #[serde(default)]
    pub accuracy: Vec<AccuracyEntry>,
    #[serde(default)]
    pub em_history: EmHistory,
}

impl Report {
    pub fn result(&self, mode: Mode, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.mode == mode && r.method == method)
    }

    pub fn accuracy_for(&self, method: Method) -> Option<&AccuracyReport> {
        self.accuracy.iter().find(|a| a.method == method).map(|a| &a.report)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn summarize_records(set: &RecordSet) -> Result<MethodResult> {
    let mut auc_by_violation = BTreeMap::new();
    for kind in [Violation::Cooccurrence, Violation::Size] {
        let subset: Vec<OocRecord> = set
            .records
            .iter()
            .filter(|r| !r.truth || r.violation == kind)
            .cloned()
            .collect();
        if subset.iter().any(|r| r.truth) && subset.iter().any(|r| !r.truth) {
            auc_by_violation.insert(kind, auc(&subset)?);
        }
    }
    Ok(MethodResult {
        mode: set.mode,
        method: set.method,
        auc: auc(&set.records)?,
        auc_by_violation,
        roc: roc_curve(&set.records)?,
    })
}

/// Label accuracy on oracle-label test scenes, split by OOC flag. GCRN is
/// judged by ConG's argmax, the no-ConG baseline by its standalone RepG.
pub fn accuracy_entries(models: &TrainedModels, test: &[SceneGraph], methods: &[Method]) -> Result<Vec<AccuracyEntry>> {
    let mut entries = Vec::new();
    for &method in methods {
        let (mut pred, mut truth, mut flags) = (Vec::new(), Vec::new(), Vec::new());
        for scene in test {
            let probs = match method {
                Method::Gcrn => models.gcrn.predict(scene, LabelSource::GroundTruth)?.cong_probs,
                Method::NoCong => models.repg_only_probs(scene)?,
                Method::Softmax => models.free.predict(scene)?,
            };
            pred.extend((0..probs.rows()).map(|r| probs.row_argmax(r)));
            truth.extend(scene.labels()?);
            flags.extend(scene.nodes().iter().map(|n| n.is_ooc));
        }
        entries.push(AccuracyEntry {
            method,
            report: accuracy_report(&pred, &truth, &flags)?,
        });
    }
    Ok(entries)
}

/// Scores every requested (mode, method) pair on the test split.
pub fn evaluate(config: &ExperimentConfig, models: &TrainedModels, test: &[SceneGraph]) -> Result<(Report, Vec<RecordSet>)> {
    evaluate_selected(config, models, test, &config.eval.modes, &config.eval.methods())
}

/// As [`evaluate`], with explicit mode and method lists.
pub fn evaluate_selected(
    config: &ExperimentConfig,
    models: &TrainedModels,
    test: &[SceneGraph],
    modes: &[Mode],
    methods: &[Method],
) -> Result<(Report, Vec<RecordSet>)> {
    let mut sets = Vec::new();
    for &mode in modes {
        let scenes = mode_scenes(test, mode, config.world.num_classes, config.eval.flip_rate, config.seed)?;
        for &method in methods {
            sets.push(RecordSet {
                mode,
                method,
                records: score_scenes(models, &scenes, method, config.eval.kl)?,
            });
        }
    }
    let results = sets.iter().map(summarize_records).collect::<Result<Vec<_>>>()?;
    let report = Report {
        results,
        accuracy: accuracy_entries(models, test, methods)?,
        em_history: models.em_history.clone(),
    };
    Ok((report, sets))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dataset: Dataset,
    pub models: TrainedModels,
    pub report: Report,
    pub record_sets: Vec<RecordSet>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let dataset = build_dataset(config)?;
    let models = train_models(config, &dataset.train)?;
    let (report, record_sets) = evaluate(config, &models, &dataset.test)?;
    Ok(ExperimentOutput {
        dataset,
        models,
        report,
        record_sets,
    })
}

pub fn run_experiment_file(path: impl AsRef<Path>) -> Result<ExperimentOutput> {
    run_experiment(&ExperimentConfig::from_file(path)?)
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Gcrn => "GCRN",
        Method::NoCong => "w/o ConG",
        Method::Softmax => "softmax confidence",
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::OracleLabels => "oracle boxes, oracle labels",
        Mode::PredLabels => "oracle boxes, pred labels",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Plain-text tables: AUC per method, accuracy split, AUC per violation kind
/// and AUC per label mode.
pub fn render_tables(report: &Report) -> String {
    let mut s = String::new();
    let first_mode = report.results.first().map(|r| r.mode);

    let _ = writeln!(s, "AUC by method");
    for r in report.results.iter().filter(|r| Some(r.mode) == first_mode) {
        let _ = writeln!(s, "  {:<20} {:.3}", method_name(r.method), r.auc);
    }

    if !report.accuracy.is_empty() {
        let _ = writeln!(s, "\nAccuracy (lower is better on OOC)");
        let _ = writeln!(s, "  {:<20} {:>8} {:>8} {:>8}", "", "OOC", "non-OOC", "overall");
        for a in &report.accuracy {
            let _ = writeln!(
                s,
                "  {:<20} {:>8} {:>8} {:>8}",
                method_name(a.method),
                fmt_opt(a.report.ooc_accuracy),
                fmt_opt(a.report.non_ooc_accuracy),
                fmt_opt(a.report.overall_accuracy)
            );
        }
    }

    let _ = writeln!(s, "\nAUC by violation kind");
    for r in report.results.iter().filter(|r| Some(r.mode) == first_mode) {
        let _ = writeln!(
            s,
            "  {:<20} co-occurrence {}  size {}",
            method_name(r.method),
            fmt_opt(r.auc_by_violation.get(&Violation::Cooccurrence).copied()),
            fmt_opt(r.auc_by_violation.get(&Violation::Size).copied())
        );
    }

    let _ = writeln!(s, "\nAUC by label mode (GCRN)");
    for r in report.results.iter().filter(|r| r.method == Method::Gcrn) {
        let _ = writeln!(s, "  {:<28} {:.3}", mode_name(r.mode), r.auc);
    }

    if !report.em_history.is_empty() {
        let _ = writeln!(s, "\nEM history");
        let _ = writeln!(s, "  {:>4} {:>10} {:>10} {:>12}", "iter", "ConG loss", "RepG loss", "disagreement");
        for e in &report.em_history {
            let _ = writeln!(
                s,
                "  {:>4} {:>10.4} {:>10.4} {:>12.4}",
                e.iteration, e.cong_loss, e.repg_loss, e.disagreement
            );
        }
    }
    s
}

/// ROC points as CSV with a `mode,method,threshold,tpr,fpr` header.
pub fn roc_csv(report: &Report) -> String {
    let mut s = String::from("mode,method,threshold,tpr,fpr\n");
    for r in &report.results {
        let mode = serde_json::to_value(r.mode).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        let method = serde_json::to_value(r.method).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        for p in &r.roc {
            let _ = writeln!(s, "{mode},{method},{},{},{}", p.threshold, p.true_positive_rate, p.false_positive_rate);
        }
    }
    s
}
