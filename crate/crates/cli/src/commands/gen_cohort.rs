//! Synthetic cohort generation: two organ-like shapes per subject with
//! class-dependent parameter distributions, written as VOX1 files plus a
//! manifest.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use abdoshape::geometry::{generate_synthetic, SyntheticSpec};
use abdoshape::io::write_vox;

use crate::manifest::{Manifest, ManifestSubject, SCHEMA_VERSION};
use crate::record::RecordBuilder;

const LIVER_DIMS: [usize; 3] = [26, 26, 26];
const SPLEEN_DIMS: [usize; 3] = [18, 18, 18];

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    /// Subjects generated per class (>= 2).
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Master seed; all shape parameters derive from it (default 7).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scale of the class-1 parameter shift (1.0 = default separation).
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Cohort name recorded in the manifest.
    #[arg(long, default_value = "synthetic")]
    pub cohort: String,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn unit_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Liver-like shape: large ellipsoid; the class signal is a strong shift in
/// the bump amplitude distribution.
fn liver_spec(rng: &mut ChaCha8Rng, label: u8, separation: f64) -> SyntheticSpec {
    SyntheticSpec {
        label,
        semi_axes: [
            uniform(rng, 6.2, 7.2),
            uniform(rng, 5.0, 5.9),
            uniform(rng, 4.2, 5.0),
        ],
        bump_amplitude: uniform(rng, 0.15, 0.75) + 1.5 * separation * label as f64,
        bump_width: uniform(rng, 0.55, 0.8),
        bump_direction: unit_dir(rng),
        noise_amplitude: uniform(rng, 0.2, 0.45),
        seed: rng.random(),
    }
}

/// Spleen-like shape: smaller ellipsoid; class 1 elongates mildly, so the
/// spleen alone carries a weaker signal than the liver.
fn spleen_spec(rng: &mut ChaCha8Rng, label: u8, separation: f64) -> SyntheticSpec {
    SyntheticSpec {
        label,
        semi_axes: [
            uniform(rng, 3.9, 4.7) + 0.3 * separation * label as f64,
            uniform(rng, 3.0, 3.6),
            uniform(rng, 2.6, 3.1),
        ],
        bump_amplitude: uniform(rng, 0.08, 0.45),
        bump_width: uniform(rng, 0.5, 0.8),
        bump_direction: unit_dir(rng),
        noise_amplitude: uniform(rng, 0.15, 0.3),
        seed: rng.random(),
    }
}

pub fn run(args: Args, globals: &crate::Globals) -> Result<()> {
    anyhow::ensure!(
        args.per_class >= 2,
        crate::UsageError("--per-class must be at least 2".into())
    );
    let seed = globals.seed_or(args.seed, 7);
    let out_dir = globals.out_dir_or(args.out_dir.clone())?;
    let mut record = RecordBuilder::new("gen-cohort");
    record.config(&args)?;
    record.seed("cohort", seed);

    let vox_dir = out_dir.join("vox");
    std::fs::create_dir_all(&vox_dir)
        .with_context(|| format!("creating {}", vox_dir.display()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(2 * args.per_class);
    for idx in 0..2 * args.per_class {
        let label = (idx >= args.per_class) as u8;
        let id = format!("s{idx:04}");
        let liver = liver_spec(&mut rng, label, args.separation);
        let spleen = spleen_spec(&mut rng, label, args.separation);
        let liver_grid = generate_synthetic(&liver, LIVER_DIMS)
            .with_context(|| format!("subject {id}: liver shape"))?;
        let spleen_grid = generate_synthetic(&spleen, SPLEEN_DIMS)
            .with_context(|| format!("subject {id}: spleen shape"))?;
        let liver_path = vox_dir.join(format!("{id}_liver.vox"));
        let spleen_path = vox_dir.join(format!("{id}_spleen.vox"));
        write_vox(&liver_path, &liver_grid)?;
        write_vox(&spleen_path, &spleen_grid)?;
        record.output(&liver_path);
        record.output(&spleen_path);
        subjects.push(ManifestSubject {
            id,
            label,
            liver: format!("vox/{}", liver_path.file_name().unwrap().to_string_lossy()),
            spleen: format!("vox/{}", spleen_path.file_name().unwrap().to_string_lossy()),
        });
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        cohort: args.cohort.clone(),
        seed,
        subjects,
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    record.output(&manifest_path);
    record.finish(&out_dir, "gen-cohort")?;
    println!(
        "generated cohort '{}': {} subjects ({} per class) under {}",
        args.cohort,
        2 * args.per_class,
        args.per_class,
        out_dir.display()
    );
    Ok(())
}
