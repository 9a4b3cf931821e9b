//! Extract a voxel shape's surface and export the first k non-constant
//! eigenfunctions as a per-vertex table next to the OFF mesh.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args as ClapArgs;
use serde::Serialize;

use abdoshape::geometry::marching_cubes;
use abdoshape::io::{atomic_write, eigenfunction_csv, read_vox, write_off};
use abdoshape::spectra::{assemble_fem, eigenfunctions};

use crate::record::RecordBuilder;

#[derive(Debug, ClapArgs, Serialize)]
pub struct Args {
    /// VOX1 input file.
    #[arg(long)]
    pub voxel: PathBuf,
    /// Number of non-constant eigenfunctions.
    #[arg(long, default_value_t = 7)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.5)]
    pub iso: f64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn run(args: Args, globals: &crate::Globals) -> Result<()> {
    let out_dir = globals.out_dir_or(args.out_dir.clone())?;
    std::fs::create_dir_all(&out_dir)?;
    let mut record = RecordBuilder::new("eigenfunctions");
    record.config(&args)?;
    record.input(&args.voxel)?;

    let grid = read_vox(&args.voxel)
        .with_context(|| format!("reading {}", args.voxel.display()))?;
    let mesh = marching_cubes(&grid, args.iso)?;
    let (functions, values) = eigenfunctions(&mesh, args.k, args.tol)?;

    let mesh_path = out_dir.join("mesh.off");
    write_off(&mesh_path, &mesh)?;
    record.output(&mesh_path);
    let csv_path = out_dir.join("eigenfunctions.csv");
    atomic_write(&csv_path, eigenfunction_csv(&functions, &values).as_bytes())?;
    record.output(&csv_path);

    // Re-verify the exported table: columns must be B-orthonormal.
    let text = std::fs::read_to_string(&csv_path)?;
    let loaded = parse_columns(&text, args.k, mesh.vertices.len())?;
    let fem = assemble_fem(&mesh)?;
    let mut worst: f64 = 0.0;
    for i in 0..args.k {
        let mut bi = vec![0.0; fem.vertex_count()];
        fem.mass.matvec(&loaded[i], &mut bi);
        for j in 0..args.k {
            let dot: f64 = loaded[j].iter().zip(&bi).map(|(a, b)| a * b).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - expect).abs());
        }
    }
    anyhow::ensure!(
        worst < 1e-6,
        "exported eigenfunctions fail the B-orthonormality check (max deviation {worst:.3e})"
    );

    record.finish(&out_dir, "eigenfunctions")?;
    println!(
        "wrote {} ({} vertices, {} triangles) and {} ({} columns, B-orthonormal to {:.1e})",
        mesh_path.display(),
        mesh.vertices.len(),
        mesh.triangles.len(),
        csv_path.display(),
        args.k,
        worst
    );
    Ok(())
}

fn parse_columns(text: &str, k: usize, rows: usize) -> Result<Vec<Vec<f64>>> {
    let mut columns = vec![Vec::with_capacity(rows); k];
    for line in text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter(|l| !l.trim().is_empty())
    {
        for (c, cell) in line.split(',').enumerate() {
            let v: f64 = cell
                .parse()
                .with_context(|| format!("bad eigenfunction value '{cell}'"))?;
            columns[c].push(v);
        }
    }
    anyhow::ensure!(
        columns.iter().all(|c| c.len() == rows),
        "eigenfunction table has wrong row count"
    );
    Ok(columns)
}
