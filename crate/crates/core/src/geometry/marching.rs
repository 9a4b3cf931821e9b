//! Marching cubes over binary occupancy grids.
//!
//! The 256-entry case table is generated once at first use from a single
//! convention: on an ambiguous face (two diagonally opposite inside corners)
//! the inside corners are always kept separated. Both cells incident to a
//! face therefore agree on its contour, which makes the extracted surface
//! closed and edge-manifold by construction; no asymptotic decider is needed.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{
    GeometryError, TriMesh, VoxelGrid, remove_degenerate_triangles, weld_vertices,
    MIN_TRIANGLE_AREA, WELD_TOLERANCE,
};

/// Corner `c` of the unit cube sits at `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_pos(c: usize) -> [f64; 3] {
    [(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64]
}

/// The 12 cube edges as corner pairs: x-edges 0..4, y-edges 4..8, z-edges 8..12.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Faces as (outward normal, corners in cyclic perimeter order).
const FACES: [([f64; 3], [usize; 4]); 6] = [
    ([-1.0, 0.0, 0.0], [0, 2, 6, 4]),
    ([1.0, 0.0, 0.0], [1, 5, 7, 3]),
    ([0.0, -1.0, 0.0], [0, 4, 5, 1]),
    ([0.0, 1.0, 0.0], [2, 3, 7, 6]),
    ([0.0, 0.0, -1.0], [0, 1, 3, 2]),
    ([0.0, 0.0, 1.0], [4, 6, 7, 5]),
];

fn edge_id(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES
        .iter()
        .position(|&(x, y)| (x, y) == key)
        .expect("face perimeter segments are cube edges")
}

fn edge_midpoint(e: usize) -> [f64; 3] {
    let (a, b) = EDGES[e];
    let (pa, pb) = (corner_pos(a), corner_pos(b));
    [
        0.5 * (pa[0] + pb[0]),
        0.5 * (pa[1] + pb[1]),
        0.5 * (pa[2] + pb[2]),
    ]
}

/// Directed contour segments of one face, oriented so the inside region lies
/// to the right when "up" is the outward face normal. Gluing the directed
/// segments of all six faces yields the oriented boundary loops of the
/// surface patch inside the cube.
fn face_segments(config: u8, face: usize) -> Vec<(usize, usize)> {
    let (normal, corners) = FACES[face];
    let inside = |q: usize| config >> corners[q] & 1 == 1;
    let fe = |q: usize| edge_id(corners[q], corners[(q + 1) % 4]);
    // (cut edge, cut edge, representative inside corner) per segment.
    let mut raw: Vec<(usize, usize, usize)> = Vec::new();
    let pattern: Vec<usize> = (0..4).filter(|&q| inside(q)).collect();
    match pattern.len() {
        0 | 4 => {}
        1 => {
            let q = pattern[0];
            raw.push((fe((q + 3) % 4), fe(q), corners[q]));
        }
        3 => {
            let q = (0..4).find(|&q| !inside(q)).unwrap();
            raw.push((fe((q + 3) % 4), fe(q), corners[(q + 2) % 4]));
        }
        2 => {
            if pattern[1] == pattern[0] + 2 {
                // Diagonal pair: keep the two inside corners separated.
                for &q in &pattern {
                    raw.push((fe((q + 3) % 4), fe(q), corners[q]));
                }
            } else {
                // Adjacent pair (q, q+1) with wrap-around.
                let q = if pattern == [0, 3] { 3 } else { pattern[0] };
                raw.push((fe((q + 3) % 4), fe((q + 1) % 4), corners[q]));
            }
        }
        _ => unreachable!(),
    }
    raw.into_iter()
        .map(|(ea, eb, r_in)| {
            let m1 = edge_midpoint(ea);
            let m2 = edge_midpoint(eb);
            let t = [m2[0] - m1[0], m2[1] - m1[1], m2[2] - m1[2]];
            let left = [
                normal[1] * t[2] - normal[2] * t[1],
                normal[2] * t[0] - normal[0] * t[2],
                normal[0] * t[1] - normal[1] * t[0],
            ];
            let mid = [
                0.5 * (m1[0] + m2[0]),
                0.5 * (m1[1] + m2[1]),
                0.5 * (m1[2] + m2[2]),
            ];
            let p = corner_pos(r_in);
            let to_inside = [p[0] - mid[0], p[1] - mid[1], p[2] - mid[2]];
            let d = left[0] * to_inside[0] + left[1] * to_inside[1] + left[2] * to_inside[2];
            // Inside on the left means the direction must be flipped.
            if d > 0.0 { (eb, ea) } else { (ea, eb) }
        })
        .collect()
}

/// Triangulated surface patch of one corner configuration, as edge-id triples.
fn build_case(config: u8) -> Vec<[u8; 3]> {
    let mut next = [usize::MAX; 12];
    for face in 0..6 {
        for (from, to) in face_segments(config, face) {
            debug_assert_eq!(next[from], usize::MAX, "each cut edge starts one segment");
            next[from] = to;
        }
    }
    let mut triangles = Vec::new();
    let mut visited = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || visited[start] {
            continue;
        }
        let mut cycle = vec![start];
        visited[start] = true;
        let mut cur = next[start];
        while cur != start {
            visited[cur] = true;
            cycle.push(cur);
            cur = next[cur];
        }
        for i in 1..cycle.len() - 1 {
            triangles.push([cycle[0] as u8, cycle[i] as u8, cycle[i + 1] as u8]);
        }
    }
    triangles
}

fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|config| build_case(config as u8)))
}

/// Extract the iso-surface of a binary occupancy grid.
///
/// Samples live at voxel centers; the volume is virtually padded with one
/// layer of empty samples so every surface is closed. Vertices are placed by
/// linear interpolation along cut edges (edge midpoints for `iso = 0.5`).
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> Result<TriMesh, GeometryError> {
    if !(iso > 0.0 && iso < 1.0) {
        return Err(GeometryError::InvalidIso(iso));
    }
    if grid.occupied_count() == 0 {
        return Err(GeometryError::EmptySurface);
    }
    let table = case_table();
    let (nx, ny, nz) = (grid.dims[0] as i64, grid.dims[1] as i64, grid.dims[2] as i64);

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // Key: (sample coords of the lower edge endpoint, axis).
    let mut edge_vertex: HashMap<(i64, i64, i64, u8), u32> = HashMap::new();

    for k in -1..nz {
        for j in -1..ny {
            for i in -1..nx {
                let mut config = 0u8;
                for c in 0..8usize {
                    let (dx, dy, dz) = ((c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64);
                    if grid.occupied_padded(i + dx, j + dy, k + dz) {
                        config |= 1 << c;
                    }
                }
                let tris = &table[config as usize];
                if tris.is_empty() {
                    continue;
                }
                let mut cube_vertex = [u32::MAX; 12];
                for tri in tris {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        let e = e as usize;
                        if cube_vertex[e] == u32::MAX {
                            let (ca, cb) = EDGES[e];
                            let axis = if e < 4 { 0u8 } else if e < 8 { 1 } else { 2 };
                            let (ax, ay, az) =
                                ((ca & 1) as i64, ((ca >> 1) & 1) as i64, ((ca >> 2) & 1) as i64);
                            let key = (i + ax, j + ay, k + az, axis);
                            let id = *edge_vertex.entry(key).or_insert_with(|| {
                                let (bx, by, bz) = (
                                    (cb & 1) as i64,
                                    ((cb >> 1) & 1) as i64,
                                    ((cb >> 2) & 1) as i64,
                                );
                                let pa = grid.sample_position(i + ax, j + ay, k + az);
                                let pb = grid.sample_position(i + bx, j + by, k + bz);
                                let va = grid.occupied_padded(i + ax, j + ay, k + az) as u8 as f64;
                                let vb = grid.occupied_padded(i + bx, j + by, k + bz) as u8 as f64;
                                let t = (iso - va) / (vb - va);
                                let id = vertices.len() as u32;
                                vertices.push([
                                    pa[0] + t * (pb[0] - pa[0]),
                                    pa[1] + t * (pb[1] - pa[1]),
                                    pa[2] + t * (pb[2] - pa[2]),
                                ]);
                                id
                            });
                            cube_vertex[e] = id;
                        }
                        ids[slot] = cube_vertex[e];
                    }
                    triangles.push(ids);
                }
            }
        }
    }

    let mesh = TriMesh {
        vertices,
        triangles,
    };
    let mesh = weld_vertices(&mesh, WELD_TOLERANCE);
    let mesh = remove_degenerate_triangles(&mesh, MIN_TRIANGLE_AREA);
    if mesh.triangles.is_empty() {
        return Err(GeometryError::EmptySurface);
    }
    if !mesh.is_edge_manifold_closed() {
        let bad = mesh
            .edge_use_counts()
            .into_iter()
            .filter(|&(_, c)| c != 2)
            .count();
        return Err(GeometryError::NonManifold(format!(
            "{bad} edges not shared by exactly 2 triangles"
        )));
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_characteristic, surface_area};

    #[test]
    fn case_table_covers_all_cut_edges() {
        for config in 0..=255u8 {
            let tris = build_case(config);
            // Every cut edge (endpoints of differing state) must be used.
            let mut cut = [false; 12];
            for (e, &(a, b)) in EDGES.iter().enumerate() {
                cut[e] = (config >> a & 1) != (config >> b & 1);
            }
            let mut used = [false; 12];
            for t in &tris {
                for &e in t {
                    used[e as usize] = true;
                }
            }
            for e in 0..12 {
                assert_eq!(cut[e], used[e], "config {config} edge {e}");
            }
        }
    }

    #[test]
    fn single_voxel_gives_octahedron() {
        let mut grid = VoxelGrid::zeros([3, 3, 3], [1.0; 3], [0.0; 3]);
        grid.set(1, 1, 1, 1);
        let mesh = marching_cubes(&grid, 0.5).unwrap();
        assert_eq!(mesh.vertices.len(), 6);
        assert_eq!(mesh.triangles.len(), 8);
        assert_eq!(euler_characteristic(&mesh), 2);
        assert!(mesh.is_edge_manifold_closed());
        assert!(mesh.signed_volume() > 0.0, "winding must be outward");
    }

    #[test]
    fn empty_grid_is_an_error() {
        let grid = VoxelGrid::zeros([4, 4, 4], [1.0; 3], [0.0; 3]);
        assert!(matches!(
            marching_cubes(&grid, 0.5),
            Err(GeometryError::EmptySurface)
        ));
    }

    #[test]
    fn voxel_ball_area_close_to_sphere() {
        // Ball centered on voxel (10, 10, 10); the 2-voxel margin still fits.
        let n = 20usize;
        let r = 8.0;
        let c = 10.0;
        let mut grid = VoxelGrid::zeros([n, n, n], [1.0; 3], [0.0; 3]);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let d = [(i as f64 - c), (j as f64 - c), (k as f64 - c)];
                    if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r {
                        grid.set(i, j, k, 1);
                    }
                }
            }
        }
        let mesh = marching_cubes(&grid, 0.5).unwrap();
        let area = surface_area(&mesh);
        let exact = 4.0 * std::f64::consts::PI * r * r;
        assert!(
            (area - exact).abs() / exact < 0.10,
            "area {area} vs sphere {exact}"
        );
        assert_eq!(euler_characteristic(&mesh), 2);
    }

    #[test]
    fn voxel_torus_has_euler_characteristic_zero() {
        let n = 24usize;
        let c = (n as f64 - 1.0) / 2.0;
        let (major, minor) = (7.0, 2.8);
        let mut grid = VoxelGrid::zeros([n, n, n], [1.0; 3], [0.0; 3]);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let (x, y, z) = (i as f64 - c, j as f64 - c, k as f64 - c);
                    let q = (x * x + y * y).sqrt() - major;
                    if q * q + z * z <= minor * minor {
                        grid.set(i, j, k, 1);
                    }
                }
            }
        }
        let mesh = marching_cubes(&grid, 0.5).unwrap();
        assert!(mesh.is_edge_manifold_closed());
        assert_eq!(euler_characteristic(&mesh), 0);
    }

    #[test]
    fn checkerboard_block_stays_manifold() {
        // Adversarial case: diagonal voxel contacts exercise every ambiguous
        // face/interior configuration.
        let n = 6usize;
        let mut grid = VoxelGrid::zeros([n, n, n], [1.0; 3], [0.0; 3]);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if (i + j + k) % 2 == 0 {
                        grid.set(i, j, k, 1);
                    }
                }
            }
        }
        let mesh = marching_cubes(&grid, 0.5).unwrap();
        assert!(mesh.is_edge_manifold_closed());
        // Consistent orientation: every undirected edge appears once per
        // direction.
        let mut directed = HashMap::new();
        for t in &mesh.triangles {
            for e in 0..3 {
                let key = (t[e], t[(e + 1) % 3]);
                *directed.entry(key).or_insert(0u32) += 1;
            }
        }
        assert!(directed.values().all(|&c| c == 1));
    }

    #[test]
    fn deterministic_output() {
        let mut grid = VoxelGrid::zeros([5, 5, 5], [1.0; 3], [0.0; 3]);
        for k in 1..4 {
            for j in 1..4 {
                for i in 1..4 {
                    grid.set(i, j, k, 1);
                }
            }
        }
        let a = marching_cubes(&grid, 0.5).unwrap();
        let b = marching_cubes(&grid, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spacing_and_origin_are_applied() {
        let mut grid = VoxelGrid::zeros([3, 3, 3], [2.0, 2.0, 2.0], [10.0, 0.0, 0.0]);
        grid.set(1, 1, 1, 1);
        let mesh = marching_cubes(&grid, 0.5).unwrap();
        // Octahedron centered on the middle voxel at (12, 2, 2).
        let c = mesh
            .vertices
            .iter()
            .fold([0.0f64; 3], |acc, v| [acc[0] + v[0], acc[1] + v[1], acc[2] + v[2]]);
        let c = [c[0] / 6.0, c[1] / 6.0, c[2] / 6.0];
        assert!((c[0] - 12.0).abs() < 1e-12);
        assert!((c[1] - 2.0).abs() < 1e-12);
        assert!((c[2] - 2.0).abs() < 1e-12);
    }
}
