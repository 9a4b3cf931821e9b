//! CLI subcommands and shared model loading.

pub mod eigenfunctions;
pub mod embed;
pub mod eval;
pub mod featurize;
pub mod gen_cohort;
pub mod report;
pub mod train;

use std::path::Path;

use anyhow::{bail, Context, Result};

use abdoshape::baseline::GbtModel;
use abdoshape::io::read_tnsr;
use abdoshape::mspnet::MspnetModel;
use abdoshape::neural::Scalar;

use train::MspnetSidecar;

pub enum LoadedModel<F: Scalar> {
    Mspnet(MspnetModel<F>),
    Gbt(GbtModel),
}

/// Load a model file: `.tnsr` checkpoints (with their `.json` sidecar) are
/// network models; `.json` files are boosted-tree models.
pub fn load_model<F: Scalar>(path: &Path) -> Result<LoadedModel<F>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tnsr") => {
            let arrays = read_tnsr(path)
                .with_context(|| format!("reading checkpoint {}", path.display()))?;
            let sidecar_path = path.with_extension("json");
            let text = std::fs::read_to_string(&sidecar_path).with_context(|| {
                format!(
                    "reading config sidecar {} for checkpoint {}",
                    sidecar_path.display(),
                    path.display()
                )
            })?;
            let sidecar: MspnetSidecar =
                serde_json::from_str(&text).context("parsing model sidecar JSON")?;
            let typed: Vec<(String, Vec<F>)> = arrays
                .into_iter()
                .map(|(name, _dims, values)| {
                    (name, values.into_iter().map(F::from_f64).collect())
                })
                .collect();
            let model = MspnetModel::from_parts(sidecar.config, sidecar.history, typed)?;
            Ok(LoadedModel::Mspnet(model))
        }
        Some("json") => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading model {}", path.display()))?;
            let model: GbtModel = serde_json::from_str(&text)
                .context("parsing boosted-tree model JSON")?;
            Ok(LoadedModel::Gbt(model))
        }
        other => bail!(
            "unrecognized model file type {:?} ({}); expected .tnsr or .json",
            other,
            path.display()
        ),
    }
}
