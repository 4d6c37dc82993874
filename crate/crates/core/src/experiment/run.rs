//! One experiment: data, network, training, evaluation and result files.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, synthetic_dataset, AugmentConfig, Dataset, Lighting, Split};
use crate::encode::Normalization;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::net::{Network, NetworkSpec, Structure, Version};
use crate::tensor::{Precision, Scalar};
use crate::train::{evaluate_top1, load_checkpoint, train, EpochRecord, InputPipeline, TrainOptions};

use super::config::{AugmentMode, DatasetSource, ExperimentConfig};
use super::reference::{lookup, NOTE};

/// Fixed header of the results CSV.
pub const CSV_HEADER: &str = "version,structure,normalization,loss,desk_scale,seed,top1,param_count,wall_s,paper_ref_top1";

/// One line of the results CSV. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub version: Version,
    pub structure: Structure,
    pub normalization: Normalization,
    pub loss: LossKind,
    pub desk_scale: usize,
    pub seed: u64,
    pub top1: f64,
    pub param_count: usize,
    pub wall_s: f64,
    /// Published number for the same cell; see [`NOTE`].
    pub paper_ref_top1: Option<f64>,
}

/// Training data plus the split that produces the reported accuracy.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    /// Drives the plateau schedule when present.
    pub val: Option<Dataset>,
    pub test: Dataset,
    pub evaluated_on: Split,
}

/// Loads data the same way for training and for later evaluation.
///
/// With `val_fraction > 0` part of the training data is held out. The
/// reported split is `test_dataset` when given, else that held-out part,
/// else the training data itself.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let seed = cfg.train.seed;
    let all = match &cfg.dataset {
        DatasetSource::Toy => synthetic_dataset(cfg.toy, seed)?,
        DatasetSource::Path(p) => load_dataset(p, cfg.dataset_format)?,
    };
    let (train, val) = if cfg.val_fraction > 0.0 {
        let (t, v) = all.partition(cfg.val_fraction, seed)?;
        if v.is_empty() || t.is_empty() {
            return Err(Error::Dataset(format!(
                "val_fraction {} leaves an empty split of {} samples",
                cfg.val_fraction,
                all.len()
            )));
        }
        (t, Some(v))
    } else {
        (all, None)
    };
    let (test, evaluated_on) = match (&cfg.test_dataset, &val) {
        (Some(p), _) => {
            let mut t = load_dataset(p, cfg.dataset_format)?;
            if t.class_names != train.class_names {
                return Err(Error::Dataset(format!(
                    "{}: class list differs from the training data",
                    p.display()
                )));
            }
            t.split = Split::Test;
            (t, Split::Test)
        }
        (None, Some(v)) => (v.clone(), Split::Val),
        (None, None) => (train.clone(), Split::Train),
    };
    Ok(Splits {
        train,
        val,
        test,
        evaluated_on,
    })
}

/// Output paths of one run, all under `cfg.out`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    /// Shared by every run writing to the same directory.
    pub results_csv: PathBuf,
    pub sidecar: PathBuf,
    pub history: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunFiles {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let stem = format!(
            "{}_{}_{}_{}_ds{}_s{}",
            cfg.version, cfg.structure, cfg.normalization, cfg.train.loss.kind, cfg.desk_scale, cfg.train.seed
        );
        let at = |ext: &str| cfg.out.join(format!("{stem}.{ext}"));
        RunFiles {
            results_csv: cfg.out.join("results.csv"),
            sidecar: at("json"),
            history: at("history.csv"),
            checkpoint: at("ckpt"),
        }
    }
}

/// What [`run_experiment`] produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub row: ResultRow,
    pub history: Vec<EpochRecord>,
    pub train_top1: Option<f64>,
    pub evaluated_on: Split,
    pub files: RunFiles,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    row: &'a ResultRow,
    paper_ref_note: Option<&'static str>,
    evaluated_on: String,
    epochs: usize,
    train_top1: Option<f64>,
    config_text: String,
    config: &'a ExperimentConfig,
}

/// Published value for the configured cell, if any.
pub fn reference(cfg: &ExperimentConfig) -> Option<f64> {
    lookup(cfg.reference_table, cfg.version, cfg.structure, cfg.train.loss.kind, cfg.normalization)
}

fn build_network<T: Scalar>(cfg: &ExperimentConfig, train_set: &Dataset) -> Result<Network<T>> {
    let channels = train_set.channels().ok_or_else(|| Error::Dataset("training split has no samples".into()))?;
    let spec = NetworkSpec::new(
        cfg.version,
        cfg.structure,
        cfg.desk_scale,
        train_set.class_count(),
        cfg.train.seed,
        cfg.net_options(channels),
    )?;
    let side = train_set.samples[0].image.dim(1).min(train_set.samples[0].image.dim(2));
    if side < spec.min_input_size() {
        return Err(Error::Config(format!(
            "{side}-pixel inputs are smaller than the network minimum {}",
            spec.min_input_size()
        )));
    }
    Network::build(spec)
}

fn augmentation(cfg: &ExperimentConfig, train_set: &Dataset) -> Result<Option<AugmentConfig>> {
    let crop = train_set.samples[0].image.dim(1).min(train_set.samples[0].image.dim(2));
    Ok(match cfg.augment {
        AugmentMode::None => None,
        AugmentMode::Desk => Some(AugmentConfig::desk(crop)),
        AugmentMode::DeskPca => Some(AugmentConfig {
            pca: Some(Lighting::from_dataset(train_set)?),
            ..AugmentConfig::desk(crop)
        }),
    })
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let splits = load_splits(cfg)?;
    let pipeline = InputPipeline::fit(cfg.normalization, &splits.train)?;
    let mut net = build_network::<T>(cfg, &splits.train)?;
    let files = RunFiles::new(cfg);
    let opts = TrainOptions {
        augment: augmentation(cfg, &splits.train)?,
        history_csv: Some(files.history.clone()),
        checkpoint: Some(files.checkpoint.clone()),
    };
    info!(
        "{} {} on {} training samples, {} parameters",
        cfg.version,
        cfg.structure,
        splits.train.len(),
        net.parameter_count()
    );
    let outcome = train(&mut net, &splits.train, splits.val.as_ref(), &pipeline, &cfg.train, &opts)?;
    let top1 = evaluate_top1(&mut net, &splits.test, &pipeline, &cfg.eval_mode, &cfg.train.loss)?;
    let row = ResultRow {
        version: cfg.version,
        structure: cfg.structure,
        normalization: cfg.normalization,
        loss: cfg.train.loss.kind,
        desk_scale: cfg.desk_scale,
        seed: cfg.train.seed,
        top1: 100.0 * top1,
        param_count: net.parameter_count(),
        wall_s: start.elapsed().as_secs_f64(),
        paper_ref_top1: reference(cfg),
    };
    Ok(RunReport {
        row,
        train_top1: outcome.train_top1,
        history: outcome.state.history,
        evaluated_on: splits.evaluated_on,
        files,
    })
}

/// Builds, trains and evaluates one configuration, then appends its row
/// to `results.csv` and writes the JSON sidecar, history and checkpoint.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let report = match cfg.train.precision {
        Precision::F32 => run_typed::<f32>(cfg)?,
        Precision::F64 => run_typed::<f64>(cfg)?,
    };
    append_row(&report.files.results_csv, &report.row)?;
    let sidecar = Sidecar {
        row: &report.row,
        paper_ref_note: report.row.paper_ref_top1.map(|_| NOTE),
        evaluated_on: report.evaluated_on.to_string(),
        epochs: report.history.len(),
        train_top1: report.train_top1,
        config_text: cfg.to_text(),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&report.files.sidecar, json).map_err(|e| Error::io(&report.files.sidecar, e))?;
    Ok(report)
}

/// Top-1 (percent) of a saved checkpoint on the configured split.
/// `checkpoint` defaults to the path [`run_experiment`] wrote.
pub fn evaluate_saved(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<f64> {
    fn typed<T: Scalar>(cfg: &ExperimentConfig, path: &Path) -> Result<f64> {
        let splits = load_splits(cfg)?;
        let pipeline = InputPipeline::fit(cfg.normalization, &splits.train)?;
        let mut net = load_checkpoint::<T>(path)?;
        if net.num_classes() != splits.test.class_count() {
            return Err(Error::Config(format!(
                "checkpoint has {} classes, data has {}",
                net.num_classes(),
                splits.test.class_count()
            )));
        }
        Ok(100.0 * evaluate_top1(&mut net, &splits.test, &pipeline, &cfg.eval_mode, &cfg.train.loss)?)
    }
    cfg.validate()?;
    let default = RunFiles::new(cfg).checkpoint;
    let path = checkpoint.unwrap_or(&default);
    match cfg.train.precision {
        Precision::F32 => typed::<f32>(cfg, path),
        Precision::F64 => typed::<f64>(cfg, path),
    }
}

/// Appends one row, writing the header first if the file is new. The row
/// goes out in a single write so concurrent appenders do not interleave.
pub fn append_row(path: &Path, row: &ResultRow) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(Vec::new());
    w.serialize(row).map_err(|e| Error::Format(format!("result row: {e}")))?;
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("result row: {e}")))?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Format(format!("{}: header is not `{CSV_HEADER}`", path.display())));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}
