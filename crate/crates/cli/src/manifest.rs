//! Cohort manifest: subject ids, binary labels, and per-organ shape files.
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub label: u8,
    /// Voxel (.vox) or cloud (.pcl) file for the liver shape.
    pub liver: String,
    /// Voxel (.vox) or cloud (.pcl) file for the spleen shape.
    pub spleen: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub cohort: String,
    pub seed: u64,
    pub subjects: Vec<ManifestSubject>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        abdoshape::io::atomic_write(path, json.as_bytes())
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }

    /// Load and validate; returns the manifest and its base directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: Manifest =
            serde_json::from_str(&text).with_context(|| "parsing manifest JSON")?;
        if manifest.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported manifest schema version {} (expected {SCHEMA_VERSION})",
                manifest.schema_version
            );
        }
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut seen = BTreeSet::new();
        for s in &manifest.subjects {
            if !seen.insert(s.id.clone()) {
                bail!("duplicate subject id '{}' in manifest", s.id);
            }
            if s.label > 1 {
                bail!("subject '{}' has non-binary label {}", s.id, s.label);
            }
            for organ in [&s.liver, &s.spleen] {
                let p = resolve(&base, organ);
                if !p.exists() {
                    bail!("subject '{}': file {} does not exist", s.id, p.display());
                }
            }
        }
        if manifest.subjects.is_empty() {
            bail!("manifest contains no subjects");
        }
        Ok((manifest, base))
    }

    /// (id, label) pairs in manifest order.
    pub fn id_labels(&self) -> Vec<(String, u8)> {
        self.subjects
            .iter()
            .map(|s| (s.id.clone(), s.label))
            .collect()
    }
}

pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
