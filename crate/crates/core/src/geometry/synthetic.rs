//! Synthetic organ-like voxel shapes and the geodesic validation sphere.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, TriMesh, VoxelGrid};
use crate::vec3;

/// Parameters of one synthetic organ-like shape.
///
/// The occupied region is star-shaped about the grid center: a point at
/// distance `r` along unit direction `u` is inside iff
/// `r <= R(u) = r_ellipsoid(u) + bump(u) + noise(u)`, where the bump is a
/// Gaussian lobe in `bump_direction` and the noise is a seeded low-order
/// trigonometric polynomial with amplitude `noise_amplitude`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Class label in {0, 1}; carried through to cohort manifests.
    pub label: u8,
    /// Ellipsoid semi-axes (a, b, c) in mm.
    pub semi_axes: [f64; 3],
    /// Peak height of the Gaussian bump in mm (>= 0).
    pub bump_amplitude: f64,
    /// Angular standard deviation of the bump in radians.
    pub bump_width: f64,
    /// Unit direction of the bump.
    pub bump_direction: [f64; 3],
    /// Peak height of the low-frequency surface noise in mm.
    pub noise_amplitude: f64,
    /// Seed for the noise field; identical spec + seed => identical grid.
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), GeometryError> {
        if self.label > 1 {
            return Err(GeometryError::InvalidSpec("label must be 0 or 1".into()));
        }
        if self.semi_axes.iter().any(|&a| !(a > 0.0)) {
            return Err(GeometryError::InvalidSpec(format!(
                "semi-axes must be positive, got {:?}",
                self.semi_axes
            )));
        }
        if !(self.bump_amplitude >= 0.0) {
            return Err(GeometryError::InvalidSpec(
                "bump amplitude must be >= 0".into(),
            ));
        }
        if !(self.bump_width > 0.0) {
            return Err(GeometryError::InvalidSpec("bump width must be > 0".into()));
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(GeometryError::InvalidSpec(
                "noise amplitude must be >= 0".into(),
            ));
        }
        let min_axis = self.semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.noise_amplitude >= min_axis {
            return Err(GeometryError::InvalidSpec(format!(
                "noise amplitude {} must stay below the smallest semi-axis {min_axis}",
                self.noise_amplitude
            )));
        }
        Ok(())
    }

    /// Largest radius the shape can reach in any direction.
    pub fn max_radius(&self) -> f64 {
        let max_axis = self.semi_axes.iter().cloned().fold(0.0, f64::max);
        max_axis + self.bump_amplitude + self.noise_amplitude
    }
}

/// Smooth low-frequency directional field with values in [-1, 1].
struct NoiseField {
    linear: [([f64; 3], f64); 3],
    quadratic: [([f64; 3], f64); 3],
    scale: f64,
}

impl NoiseField {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random_dir = |rng: &mut ChaCha8Rng| -> [f64; 3] {
            // Box-Muller pairs give an isotropic Gaussian direction.
            loop {
                let mut v = [0.0f64; 3];
                for slot in v.iter_mut() {
                    let u1: f64 = rng.random::<f64>().max(1e-12);
                    let u2: f64 = rng.random();
                    *slot = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                }
                if vec3::norm(v) > 1e-9 {
                    return vec3::normalize(v);
                }
            }
        };
        let mut linear = [([0.0; 3], 0.0); 3];
        let mut quadratic = [([0.0; 3], 0.0); 3];
        let mut total = 0.0;
        for entry in linear.iter_mut() {
            let dir = random_dir(&mut rng);
            let w = rng.random::<f64>() * 2.0 - 1.0;
            *entry = (dir, w);
            total += w.abs();
        }
        for entry in quadratic.iter_mut() {
            let dir = random_dir(&mut rng);
            let w = rng.random::<f64>() * 2.0 - 1.0;
            *entry = (dir, w);
            total += w.abs();
        }
        Self {
            linear,
            quadratic,
            scale: if total > 0.0 { 1.0 / total } else { 0.0 },
        }
    }

    fn eval(&self, u: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for (dir, w) in &self.linear {
            s += w * vec3::dot(u, *dir);
        }
        for (dir, w) in &self.quadratic {
            let d = vec3::dot(u, *dir);
            s += w * d * d;
        }
        s * self.scale
    }
}

/// Rasterize a synthetic spec into a binary grid with unit (1 mm) spacing.
///
/// The shape is centered in the grid and must fit with a 2-voxel margin.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    dims: [usize; 3],
) -> Result<VoxelGrid, GeometryError> {
    spec.validate()?;
    let spacing = [1.0f64; 3];
    let half_extent = dims
        .iter()
        .map(|&d| (d as f64 - 1.0) / 2.0)
        .fold(f64::INFINITY, f64::min);
    let available = half_extent - 2.0;
    let needed = spec.max_radius();
    if needed > available {
        return Err(GeometryError::ShapeExceedsGrid { needed, available });
    }

    let noise = NoiseField::from_seed(spec.seed);
    let d = vec3::normalize(spec.bump_direction);
    let [a, b, c] = spec.semi_axes;
    let center = [
        (dims[0] as f64 - 1.0) / 2.0,
        (dims[1] as f64 - 1.0) / 2.0,
        (dims[2] as f64 - 1.0) / 2.0,
    ];

    let mut grid = VoxelGrid::zeros(dims, spacing, [0.0; 3]);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let x = [
                    i as f64 - center[0],
                    j as f64 - center[1],
                    k as f64 - center[2],
                ];
                let r = vec3::norm(x);
                let inside = if r < 1e-12 {
                    true
                } else {
                    let u = vec3::scale(x, 1.0 / r);
                    let q = (u[0] / a).powi(2) + (u[1] / b).powi(2) + (u[2] / c).powi(2);
                    let r_ell = 1.0 / q.sqrt();
                    let angle = vec3::dot(u, d).clamp(-1.0, 1.0).acos();
                    let bump = spec.bump_amplitude
                        * (-angle * angle / (2.0 * spec.bump_width * spec.bump_width)).exp();
                    let radius = r_ell + bump + spec.noise_amplitude * noise.eval(u);
                    r <= radius
                };
                if inside {
                    grid.set(i, j, k, 1);
                }
            }
        }
    }
    Ok(grid)
}

/// Geodesic sphere with `20 * 4^subdivisions` triangles and every vertex at
/// `radius` from the origin.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriMesh {
    assert!(subdivisions <= 7, "subdivisions must be in 0..=7");
    assert!(radius > 0.0, "radius must be positive");
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for v in &mut vertices {
        *v = vec3::scale(vec3::normalize(*v), radius);
    }
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut next_triangles = Vec::with_capacity(triangles.len() * 4);
        for tri in &triangles {
            let mut mids = [0u32; 3];
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[e] = *midpoint.entry(key).or_insert_with(|| {
                    let m = vec3::scale(
                        vec3::add(vertices[a as usize], vertices[b as usize]),
                        0.5,
                    );
                    let id = vertices.len() as u32;
                    vertices.push(vec3::scale(vec3::normalize(m), radius));
                    id
                });
            }
            next_triangles.push([tri[0], mids[0], mids[2]]);
            next_triangles.push([tri[1], mids[1], mids[0]]);
            next_triangles.push([tri[2], mids[2], mids[1]]);
            next_triangles.push([mids[0], mids[1], mids[2]]);
        }
        triangles = next_triangles;
    }
    TriMesh {
        vertices,
        triangles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_characteristic, marching_cubes};

    fn ball_spec(radius: f64) -> SyntheticSpec {
        SyntheticSpec {
            label: 0,
            semi_axes: [radius; 3],
            bump_amplitude: 0.0,
            bump_width: 0.5,
            bump_direction: [1.0, 0.0, 0.0],
            noise_amplitude: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn ball_volume_close_to_analytic() {
        let grid = generate_synthetic(&ball_spec(8.0), [24, 24, 24]).unwrap();
        let count = grid.occupied_count() as f64;
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 8.0f64.powi(3);
        assert!(
            (count - exact).abs() / exact < 0.05,
            "count {count} vs {exact}"
        );
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec {
            bump_amplitude: 2.0,
            noise_amplitude: 0.5,
            seed: 99,
            ..ball_spec(7.0)
        };
        let a = generate_synthetic(&spec, [26, 26, 26]).unwrap();
        let b = generate_synthetic(&spec, [26, 26, 26]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bump_strictly_inflates() {
        let base = generate_synthetic(&ball_spec(8.0), [28, 28, 28]).unwrap();
        let bumped = generate_synthetic(
            &SyntheticSpec {
                bump_amplitude: 3.0,
                ..ball_spec(8.0)
            },
            [28, 28, 28],
        )
        .unwrap();
        assert!(bumped.occupied_count() > base.occupied_count());
    }

    #[test]
    fn oversize_shape_is_rejected() {
        let res = generate_synthetic(&ball_spec(11.0), [24, 24, 24]);
        assert!(matches!(res, Err(GeometryError::ShapeExceedsGrid { .. })));
    }

    #[test]
    fn random_specs_give_genus_zero_surfaces() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..20 {
            let spec = SyntheticSpec {
                label: (trial % 2) as u8,
                semi_axes: [
                    5.0 + 3.0 * rng.random::<f64>(),
                    4.0 + 2.0 * rng.random::<f64>(),
                    3.5 + 2.0 * rng.random::<f64>(),
                ],
                bump_amplitude: 2.0 * rng.random::<f64>(),
                bump_width: 0.4 + 0.3 * rng.random::<f64>(),
                bump_direction: [
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ],
                noise_amplitude: 0.6 * rng.random::<f64>(),
                seed: rng.random(),
            };
            let grid = generate_synthetic(&spec, [30, 30, 30]).unwrap();
            let mesh = marching_cubes(&grid, 0.5).unwrap();
            assert!(mesh.is_edge_manifold_closed(), "trial {trial}");
            assert_eq!(euler_characteristic(&mesh), 2, "trial {trial}");
        }
    }
}
