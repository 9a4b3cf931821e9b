//! Laplace-Beltrami spectra of triangle meshes and the ShapeDNA descriptor.
//!
//! The spectrum comes from the generalized eigenproblem A v = lambda B v of
//! the P1 discretization (`fem`); the first non-zero eigenvalues, linearly
//! reweighted, form the per-organ descriptor, and two organ descriptors
//! concatenate into the per-subject feature vector.

mod dense;
mod fem;
mod lobpcg;

pub use dense::{eig_sym, eig_sym_generalized, Mat};
pub use fem::{assemble_fem, assemble_fem_with, FemPair, MassKind, SparseSym};
pub use lobpcg::{lobpcg, EigenPairs};

use thiserror::Error;

use crate::geometry::{surface_area, TriMesh};

/// Auto mode switches to the dense solver at or below this vertex count.
pub const DENSE_FALLBACK_MAX_VERTICES: usize = 300;

/// Default relative residual tolerance for eigenpairs.
pub const DEFAULT_EIG_TOL: f64 = 1e-8;

/// Relative threshold under which retained eigenvalues count as zero modes.
pub const ZERO_MODE_RELATIVE: f64 = 1e-6;

/// Fixed internal seed of the blocked solver's starting subspace.
const SOLVER_SEED: u64 = 0x5EED_00DA;

const MAX_SOLVER_ITERATIONS: usize = 2000;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("triangle {index} is degenerate; clean the mesh before assembly")]
    DegenerateTriangle { index: usize },
    #[error("cannot extract {k} eigenpairs from a mesh with {vertices} vertices")]
    KTooLarge { k: usize, vertices: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error(
        "eigensolver did not converge after {iterations} iterations \
         (worst residual {worst_residual:.3e}, tolerance {tol:.3e})"
    )]
    NoConvergence {
        iterations: usize,
        worst_residual: f64,
        tol: f64,
    },
    #[error("requested {requested} non-zero eigenvalues but only {found} are available")]
    TooFewNonZero { requested: usize, found: usize },
    #[error("descriptor lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("at least one organ descriptor is required")]
    NoDescriptor,
}

/// Solver selection for `solve_spectrum`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigMethod {
    /// Dense for small problems (<= `DENSE_FALLBACK_MAX_VERTICES`), blocked
    /// sparse iteration otherwise.
    #[default]
    Auto,
    Dense,
    Sparse,
}

impl std::str::FromStr for EigMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "dense" => Ok(Self::Dense),
            "sparse" | "lobpcg" => Ok(Self::Sparse),
            other => Err(format!("unknown solver '{other}' (auto|dense|sparse)")),
        }
    }
}

/// `k` smallest eigenpairs of the discretized operator, B-orthonormal,
/// eigenvalues ascending (the near-zero constant mode included).
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub eigenvalues: Vec<f64>,
    /// One per-vertex function per eigenvalue.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

/// Solve for the `k` smallest eigenpairs of `A v = lambda B v`.
pub fn solve_spectrum(fem: &FemPair, k: usize, tol: f64) -> Result<EigenBasis, SpectraError> {
    solve_spectrum_with(fem, k, tol, EigMethod::Auto)
}

pub fn solve_spectrum_with(
    fem: &FemPair,
    k: usize,
    tol: f64,
    method: EigMethod,
) -> Result<EigenBasis, SpectraError> {
    let n = fem.vertex_count();
    if k == 0 || k >= n {
        return Err(SpectraError::KTooLarge { k, vertices: n });
    }
    let use_dense = match method {
        EigMethod::Dense => true,
        EigMethod::Sparse => false,
        EigMethod::Auto => n <= DENSE_FALLBACK_MAX_VERTICES,
    };
    let pairs = if use_dense {
        dense_pairs(fem, k)?
    } else {
        lobpcg(
            &fem.stiffness,
            &fem.mass,
            k,
            tol,
            MAX_SOLVER_ITERATIONS,
            SOLVER_SEED,
        )?
    };
    // The sparse path only returns once residuals pass tol. The dense path
    // is exact to rounding; checked against tol with a rounding floor.
    if use_dense {
        let threshold = tol.max(1e-9);
        for &r in &pairs.residuals {
            if !(r <= threshold) {
                return Err(SpectraError::NoConvergence {
                    iterations: 1,
                    worst_residual: r,
                    tol,
                });
            }
        }
    }
    Ok(EigenBasis {
        eigenvalues: pairs.values,
        eigenfunctions: pairs.vectors,
        residuals: pairs.residuals,
    })
}

fn dense_pairs(fem: &FemPair, k: usize) -> Result<EigenPairs, SpectraError> {
    let n = fem.vertex_count();
    let a = Mat::from_rows(n, n, fem.stiffness.to_dense());
    let b = Mat::from_rows(n, n, fem.mass.to_dense());
    let (values, vectors) = eig_sym_generalized(&a, &b)?;
    let mut out_values = Vec::with_capacity(k);
    let mut out_vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for j in 0..k {
        let v: Vec<f64> = (0..n).map(|r| vectors.at(r, j)).collect();
        let mut av = vec![0.0; n];
        let mut bv = vec![0.0; n];
        fem.stiffness.matvec(&v, &mut av);
        fem.mass.matvec(&v, &mut bv);
        let mut rn = 0.0;
        let mut bn = 0.0;
        for i in 0..n {
            let r = av[i] - values[j] * bv[i];
            rn += r * r;
            bn += bv[i] * bv[i];
        }
        residuals.push(rn.sqrt() / bn.sqrt().max(1e-300));
        out_values.push(values[j]);
        out_vectors.push(v);
    }
    Ok(EigenPairs {
        values: out_values,
        vectors: out_vectors,
        residuals,
    })
}

/// Spectral shape descriptor: ascending non-zero eigenvalues plus the
/// linearly reweighted variant `lambda_i / i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDna {
    /// First `l` non-zero eigenvalues, ascending, in 1/mm^2.
    pub eigenvalues: Vec<f64>,
    /// Reweighted values `lambda_i / i` (1-based index).
    pub reweighted: Vec<f64>,
    /// Relative solver residual per retained pair.
    pub residuals: Vec<f64>,
    pub vertex_count: usize,
    pub triangle_count: usize,
    pub area: f64,
    pub tol: f64,
}

impl ShapeDna {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Compute the ShapeDNA of a mesh: assemble, solve for `l + c` pairs
/// (`c` = connected components), drop the zero modes, reweight.
pub fn shape_dna(mesh: &TriMesh, l: usize, tol: f64) -> Result<ShapeDna, SpectraError> {
    shape_dna_with(mesh, l, tol, EigMethod::Auto)
}

pub fn shape_dna_with(
    mesh: &TriMesh,
    l: usize,
    tol: f64,
    method: EigMethod,
) -> Result<ShapeDna, SpectraError> {
    assert!(l >= 1, "descriptor length must be >= 1");
    let components = mesh.component_count().max(1);
    let k = l + components;
    let fem = assemble_fem(mesh)?;
    let basis = solve_spectrum_with(&fem, k, tol, method)?;
    let lambda_max = basis.eigenvalues.last().copied().unwrap_or(0.0).abs();
    let eps_zero = ZERO_MODE_RELATIVE * lambda_max;
    let keep: Vec<usize> = (0..basis.eigenvalues.len())
        .filter(|&i| basis.eigenvalues[i] >= eps_zero)
        .collect();
    if keep.len() < l {
        return Err(SpectraError::TooFewNonZero {
            requested: l,
            found: keep.len(),
        });
    }
    let eigenvalues: Vec<f64> = keep[..l].iter().map(|&i| basis.eigenvalues[i]).collect();
    let residuals: Vec<f64> = keep[..l].iter().map(|&i| basis.residuals[i]).collect();
    let reweighted: Vec<f64> = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &lam)| lam / (i + 1) as f64)
        .collect();
    Ok(ShapeDna {
        eigenvalues,
        reweighted,
        residuals,
        vertex_count: mesh.vertices.len(),
        triangle_count: mesh.triangles.len(),
        area: surface_area(mesh),
        tol,
    })
}

/// Per-vertex table of the first `k` non-constant eigenfunctions,
/// B-orthonormal, sign fixed so each function's largest-magnitude entry is
/// positive. Returns the functions plus their eigenvalues.
pub fn eigenfunctions(
    mesh: &TriMesh,
    k: usize,
    tol: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), SpectraError> {
    assert!(k >= 1, "need at least one eigenfunction");
    let components = mesh.component_count().max(1);
    let fem = assemble_fem(mesh)?;
    let basis = solve_spectrum(&fem, k + components, tol)?;
    let lambda_max = basis.eigenvalues.last().copied().unwrap_or(0.0).abs();
    let eps_zero = ZERO_MODE_RELATIVE * lambda_max;
    let mut funcs = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for i in 0..basis.eigenvalues.len() {
        if basis.eigenvalues[i] < eps_zero {
            continue;
        }
        if funcs.len() == k {
            break;
        }
        let mut f = basis.eigenfunctions[i].clone();
        // Sign convention: the entry of largest magnitude ends positive;
        // ties resolve to the lowest index.
        let mut dominant = 0usize;
        for (j, &v) in f.iter().enumerate() {
            if v.abs() > f[dominant].abs() {
                dominant = j;
            }
        }
        if f[dominant] < 0.0 {
            for v in &mut f {
                *v = -*v;
            }
        }
        funcs.push(f);
        values.push(basis.eigenvalues[i]);
    }
    if funcs.len() < k {
        return Err(SpectraError::TooFewNonZero {
            requested: k,
            found: funcs.len(),
        });
    }
    Ok((funcs, values))
}

/// Concatenate per-organ reweighted descriptors into the subject feature
/// vector, fixed order `[liver || spleen]`; single-organ mode passes one
/// descriptor and `None` for the other.
pub fn abdomen_print(
    liver: Option<&ShapeDna>,
    spleen: Option<&ShapeDna>,
) -> Result<Vec<f64>, SpectraError> {
    match (liver, spleen) {
        (Some(l), Some(s)) => {
            if l.len() != s.len() {
                return Err(SpectraError::LengthMismatch {
                    left: l.len(),
                    right: s.len(),
                });
            }
            let mut out = l.reweighted.clone();
            out.extend_from_slice(&s.reweighted);
            Ok(out)
        }
        (Some(one), None) | (None, Some(one)) => Ok(one.reweighted.clone()),
        (None, None) => Err(SpectraError::NoDescriptor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    #[test]
    fn closed_mesh_has_near_zero_first_eigenvalue() {
        let mesh = icosphere(2, 1.0);
        let fem = assemble_fem(&mesh).unwrap();
        let basis = solve_spectrum(&fem, 4, 1e-9).unwrap();
        assert!(basis.eigenvalues[0].abs() < 1e-6 * basis.eigenvalues[1]);
        // Constant eigenvector for the zero mode.
        let f = &basis.eigenfunctions[0];
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        for &v in f {
            assert!((v - mean).abs() < 1e-6 * mean.abs().max(1e-6));
        }
    }

    #[test]
    fn reweighting_divides_by_index() {
        let dna = ShapeDna {
            eigenvalues: vec![2.0, 2.0, 2.0, 6.0],
            reweighted: vec![2.0, 1.0, 2.0 / 3.0, 1.5],
            residuals: vec![0.0; 4],
            vertex_count: 0,
            triangle_count: 0,
            area: 0.0,
            tol: 1e-8,
        };
        for (i, (&lam, &hat)) in dna.eigenvalues.iter().zip(&dna.reweighted).enumerate() {
            let back = hat * (i + 1) as f64;
            assert!((back - lam).abs() <= 1e-15 * lam.abs());
        }
    }

    #[test]
    fn abdomen_print_concatenates() {
        let mk = |vals: Vec<f64>| ShapeDna {
            reweighted: vals.clone(),
            eigenvalues: vals,
            residuals: vec![],
            vertex_count: 0,
            triangle_count: 0,
            area: 0.0,
            tol: 0.0,
        };
        let liver = mk(vec![1.0, 2.0]);
        let spleen = mk(vec![3.0, 4.0]);
        assert_eq!(
            abdomen_print(Some(&liver), Some(&spleen)).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(abdomen_print(Some(&liver), None).unwrap(), vec![1.0, 2.0]);
        let long = mk(vec![0.5; 50]);
        let other = mk(vec![0.25; 50]);
        assert_eq!(abdomen_print(Some(&long), Some(&other)).unwrap().len(), 100);
        assert!(matches!(
            abdomen_print(Some(&liver), Some(&long)),
            Err(SpectraError::LengthMismatch { left: 2, right: 50 })
        ));
        assert!(matches!(
            abdomen_print(None, None),
            Err(SpectraError::NoDescriptor)
        ));
    }

    #[test]
    fn sphere_spectrum_small_subdivision() {
        // Eigenvalues of the unit sphere are m(m+1) with multiplicity 2m+1;
        // subdivision 3 (642 vertices) resolves the first two shells within
        // a few percent. Exercises the sparse path end to end.
        let mesh = icosphere(3, 1.0);
        let dna = shape_dna(&mesh, 8, 1e-8).unwrap();
        let expect = [2.0, 2.0, 2.0, 6.0, 6.0, 6.0, 6.0, 6.0];
        for (i, (&lam, &exact)) in dna.eigenvalues.iter().zip(&expect).enumerate() {
            let rel = (lam - exact).abs() / exact;
            assert!(rel < 0.05, "lambda_{i} = {lam}, want ~{exact} (rel {rel})");
        }
    }

    #[test]
    fn dense_and_sparse_paths_agree() {
        let mesh = icosphere(1, 1.0); // 42 vertices
        let fem = assemble_fem(&mesh).unwrap();
        let dense = solve_spectrum_with(&fem, 12, 1e-9, EigMethod::Dense).unwrap();
        let sparse = solve_spectrum_with(&fem, 12, 1e-9, EigMethod::Sparse).unwrap();
        for (i, (d, s)) in dense
            .eigenvalues
            .iter()
            .zip(&sparse.eigenvalues)
            .enumerate()
        {
            let scale = d.abs().max(dense.eigenvalues[11].abs());
            assert!(
                (d - s).abs() <= 1e-8 * scale,
                "pair {i}: dense {d} sparse {s}"
            );
        }
    }

    #[test]
    fn b_orthonormality_of_basis() {
        let mesh = icosphere(2, 1.0);
        let fem = assemble_fem(&mesh).unwrap();
        let basis = solve_spectrum(&fem, 6, 1e-9).unwrap();
        let n = fem.vertex_count();
        for i in 0..6 {
            let mut bi = vec![0.0; n];
            fem.mass.matvec(&basis.eigenfunctions[i], &mut bi);
            for j in 0..6 {
                let dot: f64 = basis.eigenfunctions[j]
                    .iter()
                    .zip(&bi)
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (dot - expect).abs() < 1e-6,
                    "B-inner product [{i},{j}] = {dot}"
                );
            }
        }
    }

    #[test]
    fn scaling_law_quarter_eigenvalues() {
        let mesh = icosphere(2, 1.0);
        let dna1 = shape_dna(&mesh, 6, 1e-10).unwrap();
        let dna2 = shape_dna(&mesh.scaled(2.0), 6, 1e-10).unwrap();
        for (a, b) in dna1.eigenvalues.iter().zip(&dna2.eigenvalues) {
            assert!((b - a / 4.0).abs() / (a / 4.0) < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rigid_motion_leaves_spectrum_unchanged() {
        let mesh = icosphere(2, 1.0);
        let angle = 0.83f64;
        let (s, c) = angle.sin_cos();
        // Rotation about a skew axis composed from two coordinate rotations.
        let rot = [[c, -s, 0.0], [s * c, c * c, -s], [s * s, c * s, c]];
        let moved = mesh.transformed(&rot, [3.0, -2.0, 11.0]);
        let dna1 = shape_dna(&mesh, 6, 1e-10).unwrap();
        let dna2 = shape_dna(&moved, 6, 1e-10).unwrap();
        for (a, b) in dna1.eigenvalues.iter().zip(&dna2.eigenvalues) {
            assert!((a - b).abs() / a < 1e-8, "{a} vs {b}");
        }
    }
}
