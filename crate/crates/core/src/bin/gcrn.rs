use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gcrn::checkpoint::Checkpoint;
use gcrn::dataset::{read_dataset, write_dataset};
use gcrn::experiment::{
    build_dataset, evaluate_selected, render_tables, roc_csv, summarize_records, train_models, ExperimentConfig,
    Method, Mode, RecordSet, Report, TrainedModels,
};
use gcrn::gcrn::EmHistory;
use gcrn::ingest::{attach_oracle_appearance, corrupt_labels, parse_coco_annotations, IngestOptions};
use gcrn::ooc::{KlMode, OocRecord};
use gcrn::rng;
use gcrn::synth::Dataset;
use gcrn::{Error, Result};

#[derive(Parser)]
#[command(name = "gcrn", version, about = "Out-of-context object detection with dual GCNs")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen,
    /// Train GCRN, the standalone RepG and the context-free classifier.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a dataset's test split with trained checkpoints.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_enum)]
        mode: Vec<CliMode>,
        #[arg(long, value_enum)]
        method: Vec<CliMethod>,
        #[arg(long, value_enum)]
        kl: Option<CliKl>,
    },
    /// Summarize line-delimited record files into tables, JSON and ROC CSV.
    Report {
        /// Files named `records_<mode>_<method>.jsonl` are labelled from their
        /// name; others take `--mode` and `--method`.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "oracle-labels")]
        mode: CliMode,
        #[arg(long, value_enum, default_value = "gcrn")]
        method: CliMethod,
    },
    /// Convert COCO-style annotations to the native dataset format.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Skip invalid boxes instead of failing.
        #[arg(long)]
        lenient: bool,
        /// Native dataset whose world model supplies oracle appearance features.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Corrupt labels at this rate and write the flip manifest.
        #[arg(long)]
        flip_rate: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    OracleLabels,
    PredLabels,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMethod {
    Gcrn,
    NoCong,
    Softmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliKl {
    Sym,
    Free2ctx,
    Ctx2free,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::OracleLabels => Mode::OracleLabels,
            CliMode::PredLabels => Mode::PredLabels,
        }
    }
}

impl From<CliMethod> for Method {
    fn from(m: CliMethod) -> Self {
        match m {
            CliMethod::Gcrn => Method::Gcrn,
            CliMethod::NoCong => Method::NoCong,
            CliMethod::Softmax => Method::Softmax,
        }
    }
}

impl From<CliKl> for KlMode {
    fn from(k: CliKl) -> Self {
        match k {
            CliKl::Sym => KlMode::Symmetric,
            CliKl::Free2ctx => KlMode::FreeToCtx,
            CliKl::Ctx2free => KlMode::CtxToFree,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Takes class count and appearance width from the dataset's world model.
fn align_with_dataset(config: &mut ExperimentConfig, dataset: &Dataset) -> Result<()> {
    let world = dataset
        .world
        .as_ref()
        .ok_or_else(|| Error::Validation("dataset has no world model; ingest with --world".into()))?;
    config.world.num_classes = world.num_classes;
    config.world.appearance_dim = world.appearance_dim;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_records(path: &Path, records: &[OocRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<OocRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(records)
}

fn name_of<T: serde::Serialize>(v: T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn label_from_name(path: &Path) -> Option<(Mode, Method)> {
    let stem = path.file_stem()?.to_str()?.strip_prefix("records_")?;
    for mode in [Mode::OracleLabels, Mode::PredLabels] {
        if let Some(rest) = stem.strip_prefix(&(name_of(mode) + "_")) {
            let method = serde_json::from_value(serde_json::Value::String(rest.to_owned())).ok()?;
            return Some((mode, method));
        }
    }
    None
}

fn write_report(out: &Path, report: &Report) -> Result<()> {
    fs::write(out.join("report.json"), report.to_json()?)?;
    fs::write(out.join("tables.txt"), render_tables(report))?;
    fs::write(out.join("roc.csv"), roc_csv(report))?;
    print!("{}", render_tables(report));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    config.validate()?;
    let out = cli.out.as_path();
    fs::create_dir_all(out)?;
    match cli.command {
        Command::Gen => {
            let dataset = build_dataset(&config)?;
            write_dataset(out.join("dataset.json"), &dataset)?;
            fs::write(out.join("config.toml"), config.to_toml_string()?)?;
            println!(
                "wrote {} train and {} test scenes ({} injected) to {}",
                dataset.train.len(),
                dataset.test.len(),
                dataset.manifest.len(),
                out.join("dataset.json").display()
            );
        }
        Command::Train { dataset } => {
            let dataset = read_dataset(dataset)?;
            align_with_dataset(&mut config, &dataset)?;
            if dataset.train.is_empty() {
                return Err(Error::Validation("dataset has no training scenes".into()));
            }
            let models = train_models(&config, &dataset.train)?;
            let dim = config.world.appearance_dim;
            let opt = config.train.optimizer;
            Checkpoint::from_gcrn(&models.gcrn).save(out.join("gcrn.json"))?;
            Checkpoint::from_repg(&models.repg_only, dim, opt).save(out.join("repg_only.json"))?;
            Checkpoint::from_classifier(&models.free, dim, opt).save(out.join("free.json"))?;
            write_json(&out.join("em_history.json"), &models.em_history)?;
            for e in &models.em_history {
                println!("EM iteration {}: disagreement {:.4}", e.iteration, e.disagreement);
            }
        }
        Command::Eval {
            dataset,
            models,
            mode,
            method,
            kl,
        } => {
            let dataset = read_dataset(dataset)?;
            align_with_dataset(&mut config, &dataset)?;
            if let Some(kl) = kl {
                config.eval.kl = kl.into();
            }
            let em_path = models.join("em_history.json");
            let em_history: EmHistory = if em_path.exists() {
                serde_json::from_slice(&fs::read(em_path)?)?
            } else {
                Vec::new()
            };
            let trained = TrainedModels {
                gcrn: Checkpoint::load(models.join("gcrn.json"))?.into_gcrn()?,
                repg_only: Checkpoint::load(models.join("repg_only.json"))?.into_repg()?,
                free: Checkpoint::load(models.join("free.json"))?.into_classifier()?,
                pretrain_losses: Vec::new(),
                em_history,
                free_losses: Vec::new(),
            };
            let modes: Vec<Mode> = if mode.is_empty() {
                config.eval.modes.clone()
            } else {
                mode.into_iter().map(Mode::from).collect()
            };
            let methods: Vec<Method> = if method.is_empty() {
                config.eval.methods()
            } else {
                method.into_iter().map(Method::from).collect()
            };
            let (report, sets) = evaluate_selected(&config, &trained, &dataset.test, &modes, &methods)?;
            for set in &sets {
                let name = format!("records_{}_{}.jsonl", name_of(set.mode), name_of(set.method));
                write_records(&out.join(name), &set.records)?;
            }
            write_report(out, &report)?;
        }
        Command::Report { records, mode, method } => {
            let mut results = Vec::new();
            for path in &records {
                let (mode, method) = label_from_name(path).unwrap_or((mode.into(), method.into()));
                let set = RecordSet {
                    mode,
                    method,
                    records: read_records(path)?,
                };
                results.push(summarize_records(&set)?);
            }
            let report = Report {
                results,
                accuracy: Vec::new(),
                em_history: Vec::new(),
            };
            write_report(out, &report)?;
        }
        Command::Ingest {
            input,
            lenient,
            world,
            flip_rate,
        } => {
            let parsed = parse_coco_annotations(&fs::read(input)?, IngestOptions { lenient })?;
            let world = match world {
                Some(path) => Some(
                    read_dataset(path)?
                        .world
                        .ok_or_else(|| Error::Validation("world file has no world model".into()))?,
                ),
                None => None,
            };
            let mut scenes = parsed.scenes;
            if let Some(w) = &world {
                let mut r = rng::stream(config.seed, rng::tags::APPEARANCE);
                scenes = attach_oracle_appearance(&scenes, w, &mut r)?;
            }
            if let Some(rate) = flip_rate {
                let mut r = rng::stream(config.seed, rng::tags::LABEL_NOISE);
                let classes = world.as_ref().map_or(parsed.remap.len(), |w| w.num_classes);
                let (corrupted, flips) = corrupt_labels(&scenes, classes, rate, &mut r)?;
                scenes = corrupted;
                write_json(&out.join("flips.json"), &flips)?;
            }
            write_json(&out.join("remap.json"), &parsed.remap)?;
            let dataset = Dataset {
                world,
                train: Vec::new(),
                test: scenes,
                manifest: Vec::new(),
            };
            write_dataset(out.join("dataset.json"), &dataset)?;
            println!(
                "ingested {} scenes, {} categories, {} annotations skipped",
                dataset.test.len(),
                parsed.remap.len(),
                parsed.skipped
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
