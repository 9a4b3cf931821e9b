//! Linear (P1) finite elements on triangle surface meshes: cotangent
//! stiffness and consistent (or lumped) mass matrices in CSR form.

use super::SpectraError;
use crate::geometry::{TriMesh, MIN_TRIANGLE_AREA};
use crate::vec3;

/// Symmetric sparse matrix in CSR layout with both halves stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Build from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; n + 1];
        let mut col_idx: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_counts[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_counts[i + 1] += row_counts[i];
        }
        Self {
            n,
            row_ptr: row_counts,
            col_idx,
            values,
        }
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[idx] * x[self.col_idx[idx] as usize];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[idx] as usize == r {
                    d[r] = self.values[idx];
                }
            }
        }
        d
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for r in 0..self.n {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                s[r] += self.values[idx];
            }
        }
        s
    }

    pub fn total_sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Dense copy, row-major; intended for small matrices only.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n * self.n];
        for r in 0..self.n {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                dense[r * self.n + self.col_idx[idx] as usize] = self.values[idx];
            }
        }
        dense
    }
}

/// Mass matrix flavor: `Consistent` is the default; `Lumped` puts each
/// triangle's area on the diagonal only (diagnostic option).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassKind {
    #[default]
    Consistent,
    Lumped,
}

/// Stiffness/mass pair of the P1 discretization over mesh vertices.
#[derive(Debug, Clone)]
pub struct FemPair {
    pub stiffness: SparseSym,
    pub mass: SparseSym,
}

impl FemPair {
    pub fn vertex_count(&self) -> usize {
        self.stiffness.n
    }
}

/// Assemble the cotangent stiffness and consistent mass matrices.
pub fn assemble_fem(mesh: &TriMesh) -> Result<FemPair, SpectraError> {
    assemble_fem_with(mesh, MassKind::Consistent)
}

pub fn assemble_fem_with(mesh: &TriMesh, mass_kind: MassKind) -> Result<FemPair, SpectraError> {
    let n = mesh.vertices.len();
    let mut a_trip: Vec<(u32, u32, f64)> = Vec::with_capacity(mesh.triangles.len() * 12);
    let mut b_trip: Vec<(u32, u32, f64)> = Vec::with_capacity(mesh.triangles.len() * 9);

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = mesh.triangle_vertices(t);
        let area = vec3::triangle_area(p[0], p[1], p[2]);
        if !(area >= MIN_TRIANGLE_AREA) {
            return Err(SpectraError::DegenerateTriangle { index: t });
        }
        // Stiffness: for the angle at corner v (opposite edge (a, b)),
        // accumulate -cot/2 on the off-diagonals and +cot/2 on the diagonals,
        // which keeps every row sum at zero.
        for v in 0..3 {
            let (ia, ib) = (tri[(v + 1) % 3], tri[(v + 2) % 3]);
            let ea = vec3::sub(p[(v + 1) % 3], p[v]);
            let eb = vec3::sub(p[(v + 2) % 3], p[v]);
            let cross_norm = vec3::norm(vec3::cross(ea, eb));
            let cot = vec3::dot(ea, eb) / cross_norm;
            let w = 0.5 * cot;
            a_trip.push((ia, ib, -w));
            a_trip.push((ib, ia, -w));
            a_trip.push((ia, ia, w));
            a_trip.push((ib, ib, w));
        }
        match mass_kind {
            MassKind::Consistent => {
                let diag = area / 6.0;
                let off = area / 12.0;
                for v in 0..3 {
                    b_trip.push((tri[v], tri[v], diag));
                    b_trip.push((tri[v], tri[(v + 1) % 3], off));
                    b_trip.push((tri[(v + 1) % 3], tri[v], off));
                }
            }
            MassKind::Lumped => {
                for v in 0..3 {
                    b_trip.push((tri[v], tri[v], area / 3.0));
                }
            }
        }
    }

    Ok(FemPair {
        stiffness: SparseSym::from_triplets(n, a_trip),
        mass: SparseSym::from_triplets(n, b_trip),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{icosphere, surface_area, TriMesh};

    #[test]
    fn triplet_merge() {
        let m = SparseSym::from_triplets(
            2,
            vec![(0, 0, 1.0), (0, 1, 2.0), (0, 0, 3.0), (1, 1, 5.0)],
        );
        assert_eq!(m.to_dense(), vec![4.0, 2.0, 0.0, 5.0]);
        let mut y = vec![0.0; 2];
        m.matvec(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![6.0, 5.0]);
    }

    #[test]
    fn mass_sums_to_area_right_triangle() {
        let mesh = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        assert!((fem.mass.total_sum() - 0.5).abs() < 1e-15);
        let lumped = assemble_fem_with(&mesh, MassKind::Lumped).unwrap();
        assert!((lumped.mass.total_sum() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let mesh = icosphere(2, 1.3);
        let fem = assemble_fem(&mesh).unwrap();
        for s in fem.stiffness.row_sums() {
            assert!(s.abs() < 1e-9, "row sum {s}");
        }
        // Mass total equals surface area.
        let area = surface_area(&mesh);
        assert!((fem.mass.total_sum() - area).abs() / area < 1e-9);
    }

    #[test]
    fn equilateral_triangle_cotangent_entry() {
        let h = 3.0f64.sqrt() / 2.0;
        let mesh = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        let dense = fem.stiffness.to_dense();
        let expect = -(60.0f64.to_radians().tan().recip()) / 2.0;
        for (r, c) in [(0, 1), (1, 2), (0, 2)] {
            let v = dense[r * 3 + c];
            assert!((v - expect).abs() < 1e-12, "A[{r}][{c}] = {v} want {expect}");
            let vt = dense[c * 3 + r];
            assert!((vt - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_is_symmetric() {
        let mesh = icosphere(1, 1.0);
        let fem = assemble_fem(&mesh).unwrap();
        let n = fem.stiffness.n;
        let dense = fem.stiffness.to_dense();
        for r in 0..n {
            for c in 0..n {
                let d = (dense[r * n + c] - dense[c * n + r]).abs();
                let scale = dense[r * n + c].abs().max(1.0);
                assert!(d / scale < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_triangle_is_reported() {
        let mesh = TriMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        match assemble_fem(&mesh) {
            Err(SpectraError::DegenerateTriangle { index }) => assert_eq!(index, 0),
            other => panic!("expected degenerate-triangle error, got {other:?}"),
        }
    }
}
