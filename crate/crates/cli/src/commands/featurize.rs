//! Per-subject feature extraction: spectral descriptors (surface mesh via
//! marching cubes, then the reweighted eigenvalue descriptor) or uniformly
//! sampled surface point clouds. Resumable: outputs carry a source-hash
//! sidecar and up-to-date files are skipped.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::Args as ClapArgs;
use rayon::prelude::*;
use serde::Serialize;

use abdoshape::geometry::{marching_cubes, sample_surface, PointCloud, TriMesh};
use abdoshape::io::{
    atomic_write, fnv1a64_hex, read_pcl, read_vox, shape_dna_csv, write_pcl,
};
use abdoshape::spectra::{abdomen_print, shape_dna_with, EigMethod, ShapeDna, SpectraError};

use crate::manifest::{resolve, Manifest};
use crate::record::RecordBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AbdomenPrint,
    Clouds,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abdomenprint" => Ok(Self::AbdomenPrint),
            "clouds" => Ok(Self::Clouds),
            other => Err(format!("unknown method '{other}' (abdomenprint|clouds)")),
        }
    }
}

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    #[arg(long)]
    pub manifest: PathBuf,
    /// abdomenprint (spectral descriptors) or clouds (surface samples).
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Non-zero eigenvalues per organ descriptor.
    #[arg(long, default_value_t = 50)]
    pub descriptor_len: usize,
    /// Eigensolver residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Eigensolver selection: auto, dense, or sparse.
    #[arg(long, default_value = "auto")]
    pub solver: EigMethod,
    /// Points per sampled cloud.
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    /// Base seed for surface sampling (per-subject seeds derive from it;
    /// default 0).
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Iso value for surface extraction.
    #[arg(long, default_value_t = 0.5)]
    pub iso: f64,
}

/// Load a shape file as a surface mesh (voxel inputs only).
fn load_mesh(path: &Path, iso: f64) -> Result<TriMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vox") => {
            let grid = read_vox(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(marching_cubes(&grid, iso)?)
        }
        other => bail!(
            "spectral descriptors need a voxel (.vox) input, got {:?} ({})",
            other,
            path.display()
        ),
    }
}

/// Load a shape file as a point cloud: sample voxel surfaces, pass clouds
/// through.
fn load_cloud(path: &Path, iso: f64, n: usize, seed: u64) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vox") => {
            let mesh = load_mesh(path, iso)?;
            Ok(sample_surface(&mesh, n, seed)?)
        }
        Some("pcl") => Ok(read_pcl(path)?),
        other => bail!("unsupported shape file {:?} ({})", other, path.display()),
    }
}

fn derive_seed(base: u64, id: &str, organ: &str) -> u64 {
    abdoshape::io::fnv1a64(format!("{base}:{id}:{organ}").as_bytes())
}

/// Skip work when the output exists and its sidecar matches the source
/// hash; returns true when the output is already up to date.
fn up_to_date(out: &Path, source_hash: &str) -> bool {
    let sidecar = sidecar_path(out);
    out.exists()
        && std::fs::read_to_string(&sidecar)
            .map(|h| h.trim() == source_hash)
            .unwrap_or(false)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".src");
    out.with_file_name(name)
}

fn mark_done(out: &Path, source_hash: &str) -> Result<()> {
    atomic_write(&sidecar_path(out), source_hash.as_bytes())?;
    Ok(())
}

struct SubjectOutcome {
    id: String,
    label: u8,
    descriptors: Option<(ShapeDna, ShapeDna)>,
    skipped: usize,
    numerical: bool,
    error: Option<String>,
}

pub fn run(args: Args, globals: &crate::Globals) -> Result<()> {
    let sample_seed = globals.seed_or(args.sample_seed, 0);
    let out_dir = globals.out_dir_or(args.out_dir.clone())?;
    let (manifest, base) = Manifest::load(&args.manifest)?;
    let mut record = RecordBuilder::new("featurize");
    record.config(&args)?;
    record.seed("sample", sample_seed);
    record.input(&args.manifest)?;

    let sub_dir = out_dir.join(match args.method {
        Method::AbdomenPrint => "dna",
        Method::Clouds => "clouds",
    });
    std::fs::create_dir_all(&sub_dir)?;

    let params_tag = match args.method {
        Method::AbdomenPrint => format!(
            "abdomenprint l={} tol={} solver={:?} iso={}",
            args.descriptor_len, args.tol, args.solver, args.iso
        ),
        Method::Clouds => format!(
            "clouds n={} seed={} iso={}",
            args.points, sample_seed, args.iso
        ),
    };

    let log = Mutex::new(());
    let outcomes: Vec<SubjectOutcome> = manifest
        .subjects
        .par_iter()
        .map(|subject| {
            let mut outcome = SubjectOutcome {
                id: subject.id.clone(),
                label: subject.label,
                descriptors: None,
                skipped: 0,
                numerical: false,
                error: None,
            };
            let result = (|| -> Result<()> {
                let mut dnas = Vec::new();
                for (organ, rel) in [("liver", &subject.liver), ("spleen", &subject.spleen)] {
                    let input = resolve(&base, rel);
                    let bytes = std::fs::read(&input)
                        .with_context(|| format!("reading {}", input.display()))?;
                    let source_hash =
                        fnv1a64_hex(&[bytes.as_slice(), params_tag.as_bytes()].concat());
                    match args.method {
                        Method::Clouds => {
                            let out = sub_dir.join(format!("{}_{organ}.pcl", subject.id));
                            if up_to_date(&out, &source_hash) {
                                outcome.skipped += 1;
                                continue;
                            }
                            let seed = derive_seed(sample_seed, &subject.id, organ);
                            let cloud = load_cloud(&input, args.iso, args.points, seed)?;
                            write_pcl(&out, &cloud)?;
                            mark_done(&out, &source_hash)?;
                        }
                        Method::AbdomenPrint => {
                            let out = sub_dir.join(format!("{}_{organ}.dna.csv", subject.id));
                            if up_to_date(&out, &source_hash) {
                                outcome.skipped += 1;
                                let text = std::fs::read_to_string(&out)?;
                                let (eigenvalues, reweighted) =
                                    abdoshape::io::parse_shape_dna_csv(&text)?;
                                dnas.push(ShapeDna {
                                    eigenvalues,
                                    reweighted,
                                    residuals: vec![],
                                    vertex_count: 0,
                                    triangle_count: 0,
                                    area: 0.0,
                                    tol: args.tol,
                                });
                                continue;
                            }
                            let mesh = load_mesh(&input, args.iso)?;
                            let dna = shape_dna_with(
                                &mesh,
                                args.descriptor_len,
                                args.tol,
                                args.solver,
                            )?;
                            atomic_write(&out, shape_dna_csv(&dna).as_bytes())?;
                            mark_done(&out, &source_hash)?;
                            dnas.push(dna);
                        }
                    }
                }
                if args.method == Method::AbdomenPrint {
                    let mut it = dnas.into_iter();
                    let (liver, spleen) = (it.next().unwrap(), it.next().unwrap());
                    outcome.descriptors = Some((liver, spleen));
                }
                Ok(())
            })();
            if let Err(e) = result {
                outcome.numerical = e
                    .chain()
                    .any(|c| matches!(c.downcast_ref::<SpectraError>(), Some(SpectraError::NoConvergence { .. })));
                outcome.error = Some(format!("{e:#}"));
                let _guard = log.lock().unwrap();
                eprintln!("subject {}: {e:#}", subject.id);
            }
            outcome
        })
        .collect();

    let failures: Vec<&SubjectOutcome> = outcomes.iter().filter(|o| o.error.is_some()).collect();
    let skipped: usize = outcomes.iter().map(|o| o.skipped).sum();
    if skipped > 0 {
        println!("skipped {skipped} up-to-date outputs");
    }
    if !failures.is_empty() {
        let numerical = failures.iter().any(|o| o.numerical);
        eprintln!(
            "featurize summary: {} of {} subjects failed: {}",
            failures.len(),
            outcomes.len(),
            failures
                .iter()
                .map(|o| o.id.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
        if failures.len() * 10 > outcomes.len() {
            let msg = format!(
                "{} of {} subjects failed (more than 10%)",
                failures.len(),
                outcomes.len()
            );
            if numerical {
                return Err(anyhow::Error::new(SpectraError::NoConvergence {
                    iterations: 0,
                    worst_residual: f64::NAN,
                    tol: args.tol,
                })
                .context(msg));
            }
            bail!(msg);
        }
    }

    // Combined per-subject feature matrix for the descriptor method.
    if args.method == Method::AbdomenPrint {
        let mut csv = String::from("id,label");
        for i in 0..2 * args.descriptor_len {
            csv.push_str(&format!(",f{i}"));
        }
        csv.push('\n');
        for o in &outcomes {
            let Some((liver, spleen)) = &o.descriptors else {
                continue;
            };
            let features = abdomen_print(Some(liver), Some(spleen))?;
            csv.push_str(&format!("{},{}", o.id, o.label));
            for v in features {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        let matrix_path = out_dir.join("abdomenprint.csv");
        atomic_write(&matrix_path, csv.as_bytes())?;
        record.output(&matrix_path);
        println!(
            "wrote descriptor matrix {} ({} subjects x {} features)",
            matrix_path.display(),
            outcomes.iter().filter(|o| o.error.is_none()).count(),
            2 * args.descriptor_len
        );
    } else {
        println!(
            "wrote clouds for {} subjects under {}",
            outcomes.iter().filter(|o| o.error.is_none()).count(),
            sub_dir.display()
        );
    }
    record.finish(&out_dir, "featurize")?;
    Ok(())
}
