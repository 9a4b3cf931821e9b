//! Train a classifier on a 50/50 split of the cohort and report ROC/AUC on
//! both halves: either the point-cloud network on sampled clouds, or
//! gradient boosting on the spectral descriptor matrix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use serde::{Deserialize, Serialize};

use abdoshape::analysis::{roc_auc, split_50_50, RocResult, Split};
use abdoshape::baseline::{predict_gbt, train_gbt, GbtConfig, GbtModel};
use abdoshape::io::{atomic_write, read_pcl, roc_csv, svg_roc, write_tnsr, NamedArray};
use abdoshape::mspnet::{
    predict_proba, prepare_subject, train as train_mspnet, EpochStats, LabeledSubject,
    MspnetConfig, MspnetModel, StructureMode,
};
use abdoshape::neural::Scalar;

use crate::manifest::Manifest;
use crate::record::RecordBuilder;
use crate::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Mspnet,
    Gbt,
}

impl std::str::FromStr for TrainMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mspnet" => Ok(Self::Mspnet),
            "gbt" => Ok(Self::Gbt),
            other => Err(format!("unknown method '{other}' (mspnet|gbt)")),
        }
    }
}

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory produced by `featurize` (clouds/ for mspnet, the
    /// descriptor matrix for gbt).
    #[arg(long)]
    pub features_dir: PathBuf,
    #[arg(long)]
    pub method: TrainMethod,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Seed of the 50/50 split (default 0).
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Disable stratification (stratified is the default).
    #[arg(long, default_value_t = false)]
    pub no_stratify: bool,
    /// Organ branches: both, liver, or spleen.
    #[arg(long, default_value = "both")]
    pub structures: StructureMode,
    /// Training seed (initialization + shuffling; default 0).
    #[arg(long)]
    pub seed: Option<u64>,

    // Network hyperparameters.
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    #[arg(long, value_delimiter = ',', default_value = "64,64,64,128,1024")]
    pub point_widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "64,128,1024")]
    pub tnet_point_widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "512,256")]
    pub tnet_dense_widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "512,256,2")]
    pub head_widths: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = false)]
    pub shared_branches: bool,
    #[arg(long, default_value_t = false)]
    pub unit_scale: bool,
    #[arg(long, default_value_t = false)]
    pub feature_affine: bool,
    #[arg(long, default_value_t = 0.0)]
    pub ortho_weight: f64,

    // Boosting hyperparameters.
    #[arg(long, default_value_t = 200)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub gbt_lr: f64,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 4)]
    pub min_leaf: usize,
}

/// Saved next to the TNSR checkpoint: config snapshot plus history.
#[derive(Debug, Serialize, Deserialize)]
pub struct MspnetSidecar {
    pub config: MspnetConfig,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Serialize)]
pub struct Metrics {
    pub method: TrainMethod,
    pub structures: StructureMode,
    pub split_seed: u64,
    pub stratified: bool,
    pub train_count: usize,
    pub test_count: usize,
    pub train_auc: f64,
    pub test_auc: f64,
}

pub fn run(args: Args, globals: &crate::Globals) -> Result<()> {
    let resolved = Resolved {
        split_seed: globals.seed_or(args.split_seed, 0),
        seed: globals.seed_or(args.seed, 0),
        out_dir: globals.out_dir_or(args.out_dir.clone())?,
    };
    let (manifest, _base) = Manifest::load(&args.manifest)?;
    std::fs::create_dir_all(&resolved.out_dir)?;
    let mut record = RecordBuilder::new("train");
    record.config(&args)?;
    record.seed("split", resolved.split_seed);
    record.seed("train", resolved.seed);
    record.input(&args.manifest)?;

    let split = split_50_50(&manifest.id_labels(), resolved.split_seed, !args.no_stratify)?;

    match args.method {
        TrainMethod::Mspnet => match globals.precision {
            Precision::F64 => run_mspnet::<f64>(&args, &resolved, &manifest, &split, record),
            Precision::F32 => run_mspnet::<f32>(&args, &resolved, &manifest, &split, record),
        },
        TrainMethod::Gbt => run_gbt(&args, &resolved, &manifest, &split, record),
    }
}

/// Arguments after merging the global flags.
pub struct Resolved {
    pub split_seed: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub fn mspnet_config_from_args(args: &Args, seed: u64) -> MspnetConfig {
    MspnetConfig {
        points_per_cloud: args.points,
        point_widths: args.point_widths.clone(),
        tnet_point_widths: args.tnet_point_widths.clone(),
        tnet_dense_widths: args.tnet_dense_widths.clone(),
        head_widths: args.head_widths.clone(),
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        seed,
        structures: args.structures,
        shared_branches: args.shared_branches,
        unit_scale: args.unit_scale,
        feature_affine: args.feature_affine,
        tnet_ortho_weight: args.ortho_weight,
        stop_accuracy: None,
    }
}

/// Load per-subject clouds from `features_dir/clouds` and prepare them for
/// the given config (resample + center), seeded per subject id.
pub fn load_subjects(
    manifest: &Manifest,
    features_dir: &Path,
    config: &MspnetConfig,
    record: Option<&mut RecordBuilder>,
) -> Result<Vec<LabeledSubject>> {
    let clouds = features_dir.join("clouds");
    if !clouds.is_dir() {
        bail!(
            "{} not found; run `featurize --method clouds` first",
            clouds.display()
        );
    }
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    let mut inputs = Vec::new();
    for s in &manifest.subjects {
        let liver_path = clouds.join(format!("{}_liver.pcl", s.id));
        let spleen_path = clouds.join(format!("{}_spleen.pcl", s.id));
        let liver = read_pcl(&liver_path)
            .with_context(|| format!("reading {}", liver_path.display()))?;
        let spleen = read_pcl(&spleen_path)
            .with_context(|| format!("reading {}", spleen_path.display()))?;
        inputs.push(liver_path);
        inputs.push(spleen_path);
        let seed = abdoshape::io::fnv1a64(format!("{}:{}", config.seed, s.id).as_bytes());
        subjects.push(prepare_subject(&s.id, &liver, &spleen, s.label, config, seed)?);
    }
    if let Some(record) = record {
        for p in &inputs {
            record.input(p)?;
        }
    }
    Ok(subjects)
}

fn index_subjects<'a>(
    subjects: &'a [LabeledSubject],
    ids: &[String],
) -> Result<Vec<&'a LabeledSubject>> {
    let by_id: BTreeMap<&str, &LabeledSubject> =
        subjects.iter().map(|s| (s.id.as_str(), s)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .with_context(|| format!("subject '{id}' missing from features"))
        })
        .collect()
}

fn eval_roc<F: Scalar>(
    model: &MspnetModel<F>,
    subjects: &[&LabeledSubject],
) -> Result<RocResult> {
    let mut scores = Vec::with_capacity(subjects.len());
    let mut labels = Vec::with_capacity(subjects.len());
    for s in subjects {
        scores.push(predict_proba(model, s)?);
        labels.push(s.label);
    }
    Ok(roc_auc(&scores, &labels)?)
}

pub fn model_arrays<F: Scalar>(model: &MspnetModel<F>) -> Vec<NamedArray> {
    model
        .params
        .iter()
        .map(|e| {
            (
                e.name.clone(),
                vec![e.rows as u32, e.cols as u32],
                e.values.iter().map(|&v| v.into_f64()).collect(),
            )
        })
        .collect()
}

fn write_outputs(
    args: &Args,
    out_dir: &Path,
    record: &mut RecordBuilder,
    metrics: &Metrics,
    roc_train: &RocResult,
    roc_test: &RocResult,
) -> Result<()> {
    let metrics_path = out_dir.join("metrics.json");
    atomic_write(
        &metrics_path,
        serde_json::to_string_pretty(metrics)?.as_bytes(),
    )?;
    record.output(&metrics_path);
    for (name, roc) in [("roc_train", roc_train), ("roc_test", roc_test)] {
        let csv_path = out_dir.join(format!("{name}.csv"));
        atomic_write(&csv_path, roc_csv(roc).as_bytes())?;
        record.output(&csv_path);
    }
    let svg_path = out_dir.join("roc_test.svg");
    atomic_write(
        &svg_path,
        svg_roc(roc_test, &format!("{:?} test ROC", args.method)).as_bytes(),
    )?;
    record.output(&svg_path);
    Ok(())
}

fn run_mspnet<F: Scalar>(
    args: &Args,
    resolved: &Resolved,
    manifest: &Manifest,
    split: &Split,
    mut record: RecordBuilder,
) -> Result<()> {
    let config = mspnet_config_from_args(args, resolved.seed);
    let subjects = load_subjects(manifest, &args.features_dir, &config, Some(&mut record))?;
    let train_set: Vec<LabeledSubject> = index_subjects(&subjects, &split.train)?
        .into_iter()
        .cloned()
        .collect();
    let test_set = index_subjects(&subjects, &split.test)?;

    let model = train_mspnet::<F>(&train_set, config.clone())?;

    let train_refs: Vec<&LabeledSubject> = train_set.iter().collect();
    let roc_train = eval_roc(&model, &train_refs)?;
    let roc_test = eval_roc(&model, &test_set)?;

    let ckpt_path = resolved.out_dir.join("model.mspnet.tnsr");
    write_tnsr(&ckpt_path, &model_arrays(&model))?;
    record.output(&ckpt_path);
    let sidecar = MspnetSidecar {
        config: model.config.clone(),
        history: model.history.clone(),
    };
    let sidecar_path = resolved.out_dir.join("model.mspnet.json");
    atomic_write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    record.output(&sidecar_path);

    let metrics = Metrics {
        method: TrainMethod::Mspnet,
        structures: args.structures,
        split_seed: resolved.split_seed,
        stratified: !args.no_stratify,
        train_count: train_set.len(),
        test_count: test_set.len(),
        train_auc: roc_train.auc,
        test_auc: roc_test.auc,
    };
    write_outputs(args, &resolved.out_dir, &mut record, &metrics, &roc_train, &roc_test)?;
    record.finish(&resolved.out_dir, "train")?;
    println!(
        "mspnet ({:?}): train AUC {:.4}, test AUC {:.4} ({} train / {} test)",
        args.structures, metrics.train_auc, metrics.test_auc, metrics.train_count, metrics.test_count
    );
    Ok(())
}

/// Rows of the descriptor matrix keyed by subject id.
pub fn load_descriptor_matrix(path: &Path) -> Result<BTreeMap<String, (u8, Vec<f64>)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .with_context(|| format!("line {i}: missing id"))?
            .to_string();
        let label: u8 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .with_context(|| format!("line {i}: bad label"))?;
        let features: Result<Vec<f64>, _> = parts.map(str::parse).collect();
        let features = features.with_context(|| format!("line {i}: bad feature value"))?;
        rows.insert(id, (label, features));
    }
    if rows.is_empty() {
        bail!("descriptor matrix {} has no rows", path.display());
    }
    Ok(rows)
}

/// Select per-organ descriptor columns: the matrix holds
/// `[liver || spleen]`, each half of equal length.
pub fn select_columns(features: &[f64], structures: StructureMode) -> Result<Vec<f64>> {
    if features.len() % 2 != 0 {
        bail!(
            "descriptor row has odd length {}; cannot split into organ halves",
            features.len()
        );
    }
    let half = features.len() / 2;
    Ok(match structures {
        StructureMode::Both => features.to_vec(),
        StructureMode::LiverOnly => features[..half].to_vec(),
        StructureMode::SpleenOnly => features[half..].to_vec(),
    })
}

fn run_gbt(
    args: &Args,
    resolved: &Resolved,
    manifest: &Manifest,
    split: &Split,
    mut record: RecordBuilder,
) -> Result<()> {
    let matrix_path = args.features_dir.join("abdomenprint.csv");
    if !matrix_path.exists() {
        bail!(
            "{} not found; run `featurize --method abdomenprint` first",
            matrix_path.display()
        );
    }
    record.input(&matrix_path)?;
    let rows = load_descriptor_matrix(&matrix_path)?;
    let collect = |ids: &[String]| -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
        let mut features = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        for id in ids {
            let (label, row) = rows
                .get(id)
                .with_context(|| format!("subject '{id}' missing from descriptor matrix"))?;
            features.push(select_columns(row, args.structures)?);
            labels.push(*label);
        }
        Ok((features, labels))
    };
    let (train_x, train_y) = collect(&split.train)?;
    let (test_x, test_y) = collect(&split.test)?;
    let _ = manifest;

    let config = GbtConfig {
        rounds: args.rounds,
        learning_rate: args.gbt_lr,
        max_depth: args.depth,
        min_samples_leaf: args.min_leaf,
        row_subsample: 1.0,
        col_subsample: 1.0,
        seed: resolved.seed,
    };
    let model = train_gbt(&train_x, &train_y, config)?;

    let score = |model: &GbtModel, xs: &[Vec<f64>]| -> Result<Vec<f64>> {
        xs.iter().map(|x| Ok(predict_gbt(model, x)?)).collect()
    };
    let roc_train = roc_auc(&score(&model, &train_x)?, &train_y)?;
    let roc_test = roc_auc(&score(&model, &test_x)?, &test_y)?;

    let model_path = resolved.out_dir.join("model.gbt.json");
    atomic_write(
        &model_path,
        serde_json::to_string_pretty(&model)?.as_bytes(),
    )?;
    record.output(&model_path);

    let metrics = Metrics {
        method: TrainMethod::Gbt,
        structures: args.structures,
        split_seed: resolved.split_seed,
        stratified: !args.no_stratify,
        train_count: train_y.len(),
        test_count: test_y.len(),
        train_auc: roc_train.auc,
        test_auc: roc_test.auc,
    };
    write_outputs(args, &resolved.out_dir, &mut record, &metrics, &roc_train, &roc_test)?;
    record.finish(&resolved.out_dir, "train")?;
    println!(
        "gbt ({:?}): train AUC {:.4}, test AUC {:.4} ({} train / {} test)",
        args.structures, metrics.train_auc, metrics.test_auc, metrics.train_count, metrics.test_count
    );
    Ok(())
}
