//! Embed per-subject feature vectors into 2-D with t-SNE and render the
//! true-label and predicted-label colorings as two SVG panels.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use serde::Serialize;

use abdoshape::analysis::{silhouette, tsne, FeatureDump};
use abdoshape::baseline::predict_gbt;
use abdoshape::io::{atomic_write, embedding_csv, feature_dump_csv, svg_scatter};
use abdoshape::mspnet::{branch_forward, global_features, predict_proba, MspnetError, Organ};
use abdoshape::neural::Scalar;

use super::{load_model, train, LoadedModel};
use crate::manifest::Manifest;
use crate::record::RecordBuilder;
use crate::Precision;

/// Which learned features to embed for a network model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayer {
    /// Concatenated pre-head feature (both branches).
    Fused,
    Liver,
    Spleen,
}

impl std::str::FromStr for FeatureLayer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fused" => Ok(Self::Fused),
            "liver" => Ok(Self::Liver),
            "spleen" => Ok(Self::Spleen),
            other => Err(format!("unknown feature layer '{other}' (fused|liver|spleen)")),
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
    #[arg(long, default_value_t = 20.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Embedding seed (default 0).
    #[arg(long)]
    pub tsne_seed: Option<u64>,
    /// Feature layer for network models.
    #[arg(long, default_value = "fused")]
    pub feature_layer: FeatureLayer,
    /// Descriptor columns for boosted-tree models.
    #[arg(long, default_value = "both")]
    pub structures: abdoshape::mspnet::StructureMode,
}

#[derive(Debug, Serialize)]
struct EmbedSummary {
    subject_count: usize,
    feature_dim: usize,
    perplexity: f64,
    iterations: usize,
    tsne_seed: u64,
    kl_final: f64,
    kl_after_exaggeration: f64,
    silhouette_true: f64,
    silhouette_predicted: f64,
}

pub fn run(args: Args, globals: &crate::Globals) -> Result<()> {
    match globals.precision {
        Precision::F64 => run_typed::<f64>(args, globals),
        Precision::F32 => run_typed::<f32>(args, globals),
    }
}

fn run_typed<F: Scalar>(args: Args, globals: &crate::Globals) -> Result<()> {
    let tsne_seed = globals.seed_or(args.tsne_seed, 0);
    let out_dir = globals.out_dir_or(args.out_dir.clone())?;
    let (manifest, _base) = Manifest::load(&args.manifest)?;
    std::fs::create_dir_all(&out_dir)?;
    let mut record = RecordBuilder::new("embed");
    record.config(&args)?;
    record.seed("tsne", tsne_seed);
    record.input(&args.manifest)?;
    record.input(&args.model)?;

    let ids: Vec<String> = manifest.subjects.iter().map(|s| s.id.clone()).collect();
    let labels: Vec<u8> = manifest.subjects.iter().map(|s| s.label).collect();

    let (features, predicted): (Vec<Vec<f64>>, Vec<u8>) = match load_model::<F>(&args.model)? {
        LoadedModel::Mspnet(model) => {
            if !model.is_trained() {
                return Err(MspnetError::Untrained.into());
            }
            let subjects =
                train::load_subjects(&manifest, &args.features_dir, &model.config, None)?;
            let mut features = Vec::with_capacity(subjects.len());
            let mut predicted = Vec::with_capacity(subjects.len());
            for s in &subjects {
                let f = match args.feature_layer {
                    FeatureLayer::Fused => global_features(&model, s)?,
                    FeatureLayer::Liver => branch_forward(&model, Organ::Liver, &s.liver)?,
                    FeatureLayer::Spleen => branch_forward(&model, Organ::Spleen, &s.spleen)?,
                };
                features.push(f);
                predicted.push((predict_proba(&model, s)? >= 0.5) as u8);
            }
            (features, predicted)
        }
        LoadedModel::Gbt(model) => {
            let matrix =
                train::load_descriptor_matrix(&args.features_dir.join("abdomenprint.csv"))?;
            let mut features = Vec::with_capacity(ids.len());
            let mut predicted = Vec::with_capacity(ids.len());
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
                predicted.push((predict_gbt(&model, &cols)? >= 0.5) as u8);
                features.push(cols);
            }
            (features, predicted)
        }
    };

    let dump = FeatureDump::new(ids.clone(), labels.clone(), predicted.clone(), features)?;
    let dump_path = out_dir.join("features.csv");
    atomic_write(&dump_path, feature_dump_csv(&dump).as_bytes())?;
    record.output(&dump_path);

    let embedding = tsne(&dump.features, args.perplexity, args.iterations, tsne_seed)?;
    let csv_path = out_dir.join("embedding.csv");
    atomic_write(
        &csv_path,
        embedding_csv(&ids, &embedding.coordinates, &labels, &predicted).as_bytes(),
    )?;
    record.output(&csv_path);

    let coords: Vec<Vec<f64>> = embedding.coordinates.iter().map(|c| c.to_vec()).collect();
    let sil_true = silhouette(&coords, &labels);
    let sil_pred = silhouette(&coords, &predicted);
    for (name, point_labels, title) in [
        ("embedding_true.svg", &labels, "t-SNE embedding, true labels"),
        (
            "embedding_predicted.svg",
            &predicted,
            "t-SNE embedding, predicted labels",
        ),
    ] {
        let svg = svg_scatter(&embedding.coordinates, point_labels, title);
        let path = out_dir.join(name);
        atomic_write(&path, svg.as_bytes())?;
        record.output(&path);
    }

    let summary = EmbedSummary {
        subject_count: ids.len(),
        feature_dim: dump.feature_dim(),
        perplexity: embedding.perplexity,
        iterations: embedding.iterations,
        tsne_seed: embedding.seed,
        kl_final: embedding.kl_final,
        kl_after_exaggeration: embedding.kl_after_exaggeration,
        silhouette_true: sil_true,
        silhouette_predicted: sil_pred,
    };
    let summary_path = out_dir.join("embedding.json");
    atomic_write(
        &summary_path,
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    record.output(&summary_path);
    record.finish(&out_dir, "embed")?;
    println!(
        "embedded {} subjects (dim {}): silhouette true {:.3}, predicted {:.3}, KL {:.4}",
        summary.subject_count,
        summary.feature_dim,
        sil_true,
        sil_pred,
        embedding.kl_final
    );
    Ok(())
}
