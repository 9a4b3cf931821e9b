//! Evaluate a saved model on a manifest (the whole cohort or one half of a
//! seeded split) and write ROC/AUC outputs.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use serde::Serialize;

use abdoshape::analysis::{roc_auc, split_50_50};
use abdoshape::baseline::predict_gbt;
use abdoshape::io::{atomic_write, roc_csv, svg_roc};
use abdoshape::mspnet::predict_proba;
use abdoshape::neural::Scalar;

use super::{load_model, train, LoadedModel};
use crate::manifest::Manifest;
use crate::record::RecordBuilder;
use crate::{Precision, UsageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    All,
    Train,
    Test,
}

impl std::str::FromStr for Half {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown half '{other}' (all|train|test)")),
        }
    }
}

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features_dir: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Which subjects to score.
    #[arg(long, default_value = "all")]
    pub half: Half,
    /// Split seed; required for --half train/test.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = false)]
    pub no_stratify: bool,
    /// Descriptor columns fed to a boosted-tree model (must match training).
    #[arg(long, default_value = "both")]
    pub structures: abdoshape::mspnet::StructureMode,
}

#[derive(Debug, Serialize)]
struct EvalMetrics {
    half: Half,
    subject_count: usize,
    auc: f64,
}

pub fn run(args: Args, globals: &crate::Globals) -> Result<()> {
    match globals.precision {
        Precision::F64 => run_typed::<f64>(args, globals),
        Precision::F32 => run_typed::<f32>(args, globals),
    }
}

fn run_typed<F: Scalar>(args: Args, globals: &crate::Globals) -> Result<()> {
    // Argument-combination checks come before any filesystem access.
    if args.half != Half::All && args.split_seed.is_none() && globals.seed.is_none() {
        return Err(anyhow::Error::new(UsageError(
            "--split-seed is required with --half train/test".into(),
        )));
    }
    let out_dir = globals.out_dir_or(args.out_dir.clone())?;
    let (manifest, _base) = Manifest::load(&args.manifest)?;
    std::fs::create_dir_all(&out_dir)?;
    let mut record = RecordBuilder::new("eval");
    record.config(&args)?;
    record.input(&args.manifest)?;
    record.input(&args.model)?;

    let ids: Vec<String> = match args.half {
        Half::All => manifest.subjects.iter().map(|s| s.id.clone()).collect(),
        half => {
            let seed = globals.seed_or(args.split_seed, 0);
            record.seed("split", seed);
            let split = split_50_50(&manifest.id_labels(), seed, !args.no_stratify)?;
            if half == Half::Train {
                split.train
            } else {
                split.test
            }
        }
    };
    let labels: Vec<u8> = {
        let by_id: std::collections::BTreeMap<&str, u8> = manifest
            .subjects
            .iter()
            .map(|s| (s.id.as_str(), s.label))
            .collect();
        ids.iter().map(|id| by_id[id.as_str()]).collect()
    };

    let scores: Vec<f64> = match load_model::<F>(&args.model)? {
        LoadedModel::Mspnet(model) => {
            let subjects =
                train::load_subjects(&manifest, &args.features_dir, &model.config, None)?;
            let by_id: std::collections::BTreeMap<&str, &abdoshape::mspnet::LabeledSubject> =
                subjects.iter().map(|s| (s.id.as_str(), s)).collect();
            let mut scores = Vec::with_capacity(ids.len());
            for id in &ids {
                let s = by_id
                    .get(id.as_str())
                    .with_context(|| format!("subject '{id}' missing from features"))?;
                scores.push(predict_proba(&model, s)?);
            }
            scores
        }
        LoadedModel::Gbt(model) => {
            let matrix = train::load_descriptor_matrix(&args.features_dir.join("abdomenprint.csv"))?;
            let mut scores = Vec::with_capacity(ids.len());
            for id in &ids {
                let (_, row) = matrix
                    .get(id)
                    .with_context(|| format!("subject '{id}' missing from descriptor matrix"))?;
                let cols = train::select_columns(row, args.structures)?;
                if cols.len() != model.feature_dim {
                    bail!(
                        "--structures {:?} selects {} features but the model expects {}",
                        args.structures,
                        cols.len(),
                        model.feature_dim
                    );
                }
                scores.push(predict_gbt(&model, &cols)?);
            }
            scores
        }
    };

    let roc = roc_auc(&scores, &labels)?;
    let metrics = EvalMetrics {
        half: args.half,
        subject_count: ids.len(),
        auc: roc.auc,
    };
    let metrics_path = out_dir.join("eval_metrics.json");
    atomic_write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics)?.as_bytes(),
    )?;
    record.output(&metrics_path);
    let csv_path = out_dir.join("eval_roc.csv");
    atomic_write(&csv_path, roc_csv(&roc).as_bytes())?;
    record.output(&csv_path);
    let svg_path = out_dir.join("eval_roc.svg");
    atomic_write(&svg_path, svg_roc(&roc, "evaluation ROC").as_bytes())?;
    record.output(&svg_path);
    record.finish(&out_dir, "eval")?;
    println!(
        "eval ({:?}): AUC {:.4} over {} subjects",
        args.half, roc.auc, ids.len()
    );
    Ok(())
}
