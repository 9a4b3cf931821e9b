//! Voxel volumes, triangle-mesh surfaces, point clouds, and the synthetic
//! shape generator used for desk-scale cohorts.
//!
//! Coordinates are millimeters throughout. All operations are pure functions
//! of their inputs (plus an explicit seed where randomness is involved).

mod marching;
mod synthetic;

pub use marching::marching_cubes;
pub use synthetic::{generate_synthetic, icosphere, SyntheticSpec};

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vec3;

/// Triangles below this area (mm^2) are treated as degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Vertex welding tolerance (mm) applied after surface extraction.
pub const WELD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error("iso value {0} outside (0, 1)")]
    InvalidIso(f64),
    #[error("empty surface: occupancy contains no set voxels")]
    EmptySurface,
    #[error("internal error: extracted surface is not edge-manifold ({0})")]
    NonManifold(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("triangle {index} is degenerate (area {area:.3e} mm^2)")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("cannot sample a zero-area mesh")]
    ZeroAreaMesh,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("shape exceeds grid: needs radius {needed:.2} mm but only {available:.2} mm fits with a 2-voxel margin")]
    ShapeExceedsGrid { needed: f64, available: f64 },
    #[error("point cloud must contain at least one point")]
    EmptyCloud,
    #[error("non-finite coordinate in point cloud")]
    NonFiniteCoordinate,
}

/// Binary occupancy volume with physical spacing, x-fastest layout.
///
/// The sample for voxel `(i, j, k)` sits at the voxel center
/// `origin + spacing * (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub occupancy: Vec<u8>,
}

impl VoxelGrid {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        occupancy: Vec<u8>,
    ) -> Result<Self, GeometryError> {
        if dims.iter().any(|&d| d < 1) {
            return Err(GeometryError::InvalidGrid(format!(
                "all dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(GeometryError::InvalidGrid(format!(
                "all spacing components must be positive, got {spacing:?}"
            )));
        }
        let expect = dims[0] * dims[1] * dims[2];
        if occupancy.len() != expect {
            return Err(GeometryError::InvalidGrid(format!(
                "occupancy length {} != nx*ny*nz = {expect}",
                occupancy.len()
            )));
        }
        if occupancy.iter().any(|&v| v > 1) {
            return Err(GeometryError::InvalidGrid(
                "occupancy values must be 0 or 1".into(),
            ));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            occupancy,
        })
    }

    /// Empty (all-zero) grid.
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        Self::new(dims, spacing, origin, vec![0u8; dims[0] * dims[1] * dims[2]])
            .expect("zero grid is valid")
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.occupancy[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: u8) {
        let idx = self.index(i, j, k);
        self.occupancy[idx] = v;
    }

    /// Physical position of a (possibly out-of-range) sample point.
    #[inline]
    pub fn sample_position(&self, i: i64, j: i64, k: i64) -> [f64; 3] {
        [
            self.origin[0] + self.spacing[0] * i as f64,
            self.origin[1] + self.spacing[1] * j as f64,
            self.origin[2] + self.spacing[2] * k as f64,
        ]
    }

    /// Occupancy with out-of-range samples treated as empty.
    #[inline]
    pub fn occupied_padded(&self, i: i64, j: i64, k: i64) -> bool {
        if i < 0 || j < 0 || k < 0 {
            return false;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        if i >= self.dims[0] || j >= self.dims[1] || k >= self.dims[2] {
            return false;
        }
        self.get(i, j, k) == 1
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v == 1).count()
    }
}

/// Indexed triangle surface with consistent outward winding.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let nv = vertices.len() as u32;
        if vertices
            .iter()
            .any(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(GeometryError::InvalidMesh("non-finite vertex".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(GeometryError::InvalidMesh(format!(
                    "triangle {t} references vertex out of range"
                )));
            }
        }
        let mesh = Self {
            vertices,
            triangles,
        };
        for t in 0..mesh.triangles.len() {
            let area = mesh.triangle_area(t);
            if area < MIN_TRIANGLE_AREA {
                return Err(GeometryError::DegenerateTriangle { index: t, area });
            }
        }
        Ok(mesh)
    }

    #[inline]
    pub fn triangle_vertices(&self, t: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    #[inline]
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        vec3::triangle_area(a, b, c)
    }

    /// Uniformly scale all vertices about the origin.
    pub fn scaled(&self, s: f64) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| vec3::scale(*v, s)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Apply `v -> R v + t` to every vertex.
    pub fn transformed(&self, rotation: &[[f64; 3]; 3], translation: [f64; 3]) -> TriMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let r = [
                    vec3::dot(rotation[0], *v),
                    vec3::dot(rotation[1], *v),
                    vec3::dot(rotation[2], *v),
                ];
                vec3::add(r, translation)
            })
            .collect();
        TriMesh {
            vertices,
            triangles: self.triangles.clone(),
        }
    }

    /// Signed volume via the divergence theorem; positive for closed,
    /// outward-wound surfaces.
    pub fn signed_volume(&self) -> f64 {
        let mut v6 = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_vertices(t);
            v6 += vec3::dot(a, vec3::cross(b, c));
        }
        v6 / 6.0
    }

    /// Number of connected components of the vertex graph.
    pub fn component_count(&self) -> usize {
        let n = self.vertices.len();
        if n == 0 {
            return 0;
        }
        let mut parent: Vec<u32> = (0..n as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        for tri in &self.triangles {
            for e in 0..3 {
                let a = find(&mut parent, tri[e]);
                let b = find(&mut parent, tri[(e + 1) % 3]);
                if a != b {
                    parent[a as usize] = b;
                }
            }
        }
        let mut roots: Vec<u32> = (0..n as u32).map(|i| find(&mut parent, i)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    /// Map from undirected edge to the number of incident triangles.
    pub fn edge_use_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut counts = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// True when every undirected edge is shared by exactly two triangles.
    pub fn is_edge_manifold_closed(&self) -> bool {
        self.edge_use_counts().values().all(|&c| c == 2)
    }
}

/// Sum of triangle areas in mm^2.
pub fn surface_area(mesh: &TriMesh) -> f64 {
    (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).sum()
}

/// V - E + F with E counted as unique undirected edges.
pub fn euler_characteristic(mesh: &TriMesh) -> i64 {
    let v = mesh.vertices.len() as i64;
    let f = mesh.triangles.len() as i64;
    let e = mesh.edge_use_counts().len() as i64;
    v - e + f
}

/// Unordered set of 3D surface points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(GeometryError::NonFiniteCoordinate);
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            c = vec3::add(c, *p);
        }
        vec3::scale(c, 1.0 / self.points.len() as f64)
    }

    /// Root-mean-square distance from the origin.
    pub fn rms_radius(&self) -> f64 {
        let s: f64 = self.points.iter().map(|p| vec3::dot(*p, *p)).sum();
        (s / self.points.len() as f64).sqrt()
    }
}

/// Draw `n` points uniformly over the surface area of `mesh`.
///
/// Triangles are chosen with probability proportional to area; positions
/// within a triangle use reflected barycentric sampling. Deterministic for a
/// fixed `(mesh, n, seed)`.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    if n < 1 {
        return Err(GeometryError::InvalidMesh("sample count must be >= 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::ZeroAreaMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let t = cumulative.partition_point(|&acc| acc < target);
        let t = t.min(mesh.triangles.len() - 1);
        let [a, b, c] = mesh.triangle_vertices(t);
        let mut u = rng.random::<f64>();
        let mut v = rng.random::<f64>();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = vec3::add(
            a,
            vec3::add(
                vec3::scale(vec3::sub(b, a), u),
                vec3::scale(vec3::sub(c, a), v),
            ),
        );
        points.push(p);
    }
    PointCloud::new(points)
}

/// Translate the centroid to the origin; with `unit_scale`, also divide by
/// the RMS radius so the result has RMS radius 1.
pub fn center_cloud(cloud: &PointCloud, unit_scale: bool) -> PointCloud {
    let c = cloud.centroid();
    let mut points: Vec<[f64; 3]> = cloud.points.iter().map(|p| vec3::sub(*p, c)).collect();
    if unit_scale {
        let centered = PointCloud {
            points: points.clone(),
        };
        let rms = centered.rms_radius();
        if rms > 0.0 {
            for p in &mut points {
                *p = vec3::scale(*p, 1.0 / rms);
            }
        }
    }
    PointCloud { points }
}

/// Merge vertices closer than `tol` and drop triangles that become invalid.
pub fn weld_vertices(mesh: &TriMesh, tol: f64) -> TriMesh {
    // Quantized hashing: vertices within tol of each other land in the same
    // or neighboring buckets.
    let inv = 1.0 / tol.max(f64::MIN_POSITIVE);
    let key = |v: [f64; 3]| -> (i64, i64, i64) {
        (
            (v[0] * inv).round() as i64,
            (v[1] * inv).round() as i64,
            (v[2] * inv).round() as i64,
        )
    };
    let mut buckets: HashMap<(i64, i64, i64), u32> = HashMap::new();
    let mut remap = vec![0u32; mesh.vertices.len()];
    let mut vertices: Vec<[f64; 3]> = Vec::with_capacity(mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let k = key(*v);
        let mut found = None;
        'search: for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                for dz in -1..=1i64 {
                    if let Some(&idx) = buckets.get(&(k.0 + dx, k.1 + dy, k.2 + dz))
                        && vec3::norm(vec3::sub(*v, vertices[idx as usize])) <= tol
                    {
                        found = Some(idx);
                        break 'search;
                    }
                }
            }
        }
        remap[i] = match found {
            Some(idx) => idx,
            None => {
                let idx = vertices.len() as u32;
                vertices.push(*v);
                buckets.insert(k, idx);
                idx
            }
        };
    }
    let triangles = mesh
        .triangles
        .iter()
        .map(|t| [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]])
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    compact_unused(&TriMesh {
        vertices,
        triangles,
    })
}

/// Drop triangles with area below `min_area`, then remove unused vertices.
pub fn remove_degenerate_triangles(mesh: &TriMesh, min_area: f64) -> TriMesh {
    let triangles: Vec<[u32; 3]> = (0..mesh.triangles.len())
        .filter(|&t| mesh.triangle_area(t) >= min_area)
        .map(|t| mesh.triangles[t])
        .collect();
    compact_unused(&TriMesh {
        vertices: mesh.vertices.clone(),
        triangles,
    })
}

fn compact_unused(mesh: &TriMesh) -> TriMesh {
    let mut used = vec![false; mesh.vertices.len()];
    for t in &mesh.triangles {
        for &i in t {
            used[i as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        if used[i] {
            remap[i] = vertices.len() as u32;
            vertices.push(*v);
        }
    }
    let triangles = mesh
        .triangles
        .iter()
        .map(|t| [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]])
        .collect();
    TriMesh {
        vertices,
        triangles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn right_triangle(legs: (f64, f64)) -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [legs.0, 0.0, 0.0], [0.0, legs.1, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn right_triangle_area() {
        let mesh = right_triangle((3.0, 4.0));
        assert_eq!(surface_area(&mesh), 6.0);
    }

    #[test]
    fn area_scales_quadratically() {
        let mesh = right_triangle((3.0, 4.0));
        let scaled = mesh.scaled(2.0);
        assert_eq!(surface_area(&scaled), 4.0 * surface_area(&mesh));
    }

    #[test]
    fn icosphere_area_close_to_analytic() {
        let mesh = icosphere(4, 1.0);
        let area = surface_area(&mesh);
        let exact = 4.0 * std::f64::consts::PI;
        assert!(
            (area - exact).abs() / exact < 0.005,
            "area {area} vs {exact}"
        );
    }

    #[test]
    fn euler_characteristic_values() {
        assert_eq!(euler_characteristic(&right_triangle((1.0, 1.0))), 1);
        assert_eq!(euler_characteristic(&icosphere(2, 1.0)), 2);
    }

    #[test]
    fn icosphere_counts_and_radius() {
        let base = icosphere(0, 1.0);
        assert_eq!(base.vertices.len(), 12);
        assert_eq!(base.triangles.len(), 20);
        let s2 = icosphere(2, 3.0);
        assert_eq!(s2.vertices.len(), 162);
        assert_eq!(s2.triangles.len(), 320);
        for v in &s2.vertices {
            assert!((vec3::norm(*v) - 3.0).abs() < 1e-12);
        }
        assert!(s2.signed_volume() > 0.0, "winding must be outward");
    }

    #[test]
    fn sampled_points_stay_in_triangle() {
        let mesh = right_triangle((1.0, 1.0));
        let cloud = sample_surface(&mesh, 100, 7).unwrap();
        for p in &cloud.points {
            // Barycentric coordinates w.r.t. the right triangle.
            let (u, v) = (p[0], p[1]);
            assert!(u >= 0.0 && v >= 0.0 && u + v <= 1.0 + 1e-12);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn sampling_matches_area_ratio() {
        // Two disjoint triangles with area ratio 1:3.
        let mesh = TriMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [10.0, 0.0, 0.0],
                [13.0, 0.0, 0.0],
                [10.0, 2.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 40_000usize;
        let cloud = sample_surface(&mesh, n, 11).unwrap();
        let first = cloud.points.iter().filter(|p| p[0] < 5.0).count();
        // Two-sided binomial test at p = 0.99 via the normal approximation:
        // |count - n p| <= z_{0.995} sqrt(n p (1-p)), z_{0.995} = 2.5758.
        let p = 0.25;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (first as f64 - mean).abs() <= 2.5758 * sd,
            "count {first} too far from mean {mean}"
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let mesh = icosphere(1, 1.0);
        let a = sample_surface(&mesh, 500, 42).unwrap();
        let b = sample_surface(&mesh, 500, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_triangle_counts_pass_chi_square() {
        // Ten disjoint coplanar triangles with areas 1..10; each sample is
        // assigned to its triangle by x-range, so the per-triangle counts
        // can be chi-square tested against the area fractions.
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for t in 0..10u32 {
            let base = 3.0 * t as f64;
            let height = (t + 1) as f64; // area = (t+1)/2 * 2 = t+1
            vertices.push([base, 0.0, 0.0]);
            vertices.push([base + 2.0, 0.0, 0.0]);
            vertices.push([base, height, 0.0]);
            triangles.push([3 * t, 3 * t + 1, 3 * t + 2]);
        }
        let mesh = TriMesh::new(vertices, triangles).unwrap();
        let n = 20_000usize;
        let cloud = sample_surface(&mesh, n, 3).unwrap();
        let total = surface_area(&mesh);
        assert!((total - 55.0).abs() < 1e-12);
        let mut counts = [0usize; 10];
        for p in &cloud.points {
            let t = (p[0] / 3.0).floor() as usize;
            counts[t.min(9)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .map(|(t, &c)| {
                let expected = n as f64 * (t + 1) as f64 / 55.0;
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // dof = 9, chi-square 0.99 quantile = 21.666.
        assert!(chi2 < 21.666, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn center_cloud_behaviour() {
        let cloud = PointCloud::new(vec![[1.0, 1.0, 1.0], [3.0, 1.0, 1.0]]).unwrap();
        let centered = center_cloud(&cloud, false);
        assert_eq!(centered.points, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        // Idempotence.
        let again = center_cloud(&centered, false);
        assert_eq!(again.points, centered.points);
        // Unit scaling.
        let scaled = center_cloud(&cloud, true);
        assert!((scaled.rms_radius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let res = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        );
        assert!(matches!(
            res,
            Err(GeometryError::DegenerateTriangle { index: 0, .. })
        ));
    }

    #[test]
    fn weld_merges_near_duplicates() {
        let mesh = TriMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1e-12, 0.0, 0.0],
                [1.0, 1.0, 0.0],
            ],
            triangles: vec![[0, 1, 2], [3, 1, 4]],
        };
        let welded = weld_vertices(&mesh, 1e-9);
        assert_eq!(welded.vertices.len(), 4);
        assert_eq!(welded.triangles.len(), 2);
    }
}
