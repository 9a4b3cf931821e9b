//! Eigenfunction export behavior on reference meshes.

use abdoshape::geometry::icosphere;
use abdoshape::io::eigenfunction_csv;
use abdoshape::spectra::{assemble_fem, eigenfunctions};

/// Pearson correlation between two vectors.
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Least-squares fit of `f ~ b0 + b1 x + b2 y + b3 z` via the 4x4 normal
/// equations; returns the fitted values.
fn linear_fit(mesh_vertices: &[[f64; 3]], f: &[f64]) -> Vec<f64> {
    let n = mesh_vertices.len();
    let design = |i: usize| -> [f64; 4] {
        let v = mesh_vertices[i];
        [1.0, v[0], v[1], v[2]]
    };
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for i in 0..n {
        let row = design(i);
        for r in 0..4 {
            for c in 0..4 {
                ata[r][c] += row[r] * row[c];
            }
            atb[r] += row[r] * f[i];
        }
    }
    // Gaussian elimination with partial pivoting on the 4x4 system.
    let mut aug = [[0.0f64; 5]; 4];
    for r in 0..4 {
        aug[r][..4].copy_from_slice(&ata[r]);
        aug[r][4] = atb[r];
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        for r in col + 1..4 {
            let factor = aug[r][col] / aug[col][col];
            for c in col..5 {
                aug[r][c] -= factor * aug[col][c];
            }
        }
    }
    let mut beta = [0.0f64; 4];
    for r in (0..4).rev() {
        let mut acc = aug[r][4];
        for c in r + 1..4 {
            acc -= aug[r][c] * beta[c];
        }
        beta[r] = acc / aug[r][r];
    }
    (0..n)
        .map(|i| {
            let row = design(i);
            (0..4).map(|c| beta[c] * row[c]).sum()
        })
        .collect()
}

#[test]
fn first_function_is_b_orthogonal_to_constants() {
    let mesh = icosphere(2, 1.0);
    let (funcs, _) = eigenfunctions(&mesh, 1, 1e-9).unwrap();
    let fem = assemble_fem(&mesh).unwrap();
    let ones = vec![1.0; mesh.vertices.len()];
    let mut b_ones = vec![0.0; mesh.vertices.len()];
    fem.mass.matvec(&ones, &mut b_ones);
    let dot: f64 = funcs[0].iter().zip(&b_ones).map(|(a, b)| a * b).sum();
    assert!(dot.abs() < 1e-6, "f^T B 1 = {dot}");
}

#[test]
fn sphere_degree_one_functions_are_linear_in_coordinates() {
    // The first three non-constant eigenfunctions span the degree-1
    // harmonics, i.e. linear functions of the vertex coordinates.
    let mesh = icosphere(3, 1.0);
    let (funcs, values) = eigenfunctions(&mesh, 3, 1e-9).unwrap();
    for (i, f) in funcs.iter().enumerate() {
        assert!((values[i] - 2.0).abs() / 2.0 < 0.05, "lambda {}", values[i]);
        let fitted = linear_fit(&mesh.vertices, f);
        let r = correlation(f, &fitted);
        assert!(r.abs() > 0.99, "function {i} correlation {r}");
    }
}

#[test]
fn sign_convention_makes_export_deterministic() {
    let mesh = icosphere(2, 1.0);
    let (f1, v1) = eigenfunctions(&mesh, 4, 1e-9).unwrap();
    let (f2, v2) = eigenfunctions(&mesh, 4, 1e-9).unwrap();
    assert_eq!(f1, f2);
    assert_eq!(v1, v2);
    assert_eq!(eigenfunction_csv(&f1, &v1), eigenfunction_csv(&f2, &v2));
    // Dominant entry of every exported column is positive.
    for f in &f1 {
        let dominant = f
            .iter()
            .fold(0.0f64, |acc, &v| if v.abs() > acc.abs() { v } else { acc });
        assert!(dominant > 0.0);
    }
}
