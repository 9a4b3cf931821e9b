//! File formats and report writers: binary voxel (VOX1), point-cloud (PCL1)
//! and parameter-checkpoint (TNSR) formats, ASCII OFF meshes, CSV tables,
//! and fixed-viewport SVG plots. All binary formats are little-endian.
//!
//! Writers are deterministic: identical inputs produce identical bytes,
//! which is what makes whole-pipeline reruns hash-equal.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::analysis::{FeatureDump, RocResult};
use crate::geometry::{PointCloud, TriMesh, VoxelGrid};
use crate::spectra::ShapeDna;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("corrupt {format} file: {detail}")]
    Corrupt {
        format: &'static str,
        detail: String,
    },
    #[error("invalid payload: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Atomic writes and hashing
// ---------------------------------------------------------------------------

/// Write via a temp file in the same directory, then rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// 64-bit FNV-1a content hash (cache freshness, not security).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

pub fn fnv1a64_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, FormatError> {
    let bytes = fs::read(path)?;
    Ok(fnv1a64_hex(&bytes))
}

// ---------------------------------------------------------------------------
// VOX1: binary occupancy volumes
// ---------------------------------------------------------------------------

pub fn encode_vox(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 12 + 24 + grid.occupancy.len());
    out.extend_from_slice(b"VOX1");
    for d in grid.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in grid.spacing {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    for o in grid.origin {
        out.extend_from_slice(&(o as f32).to_le_bytes());
    }
    out.extend_from_slice(&grid.occupancy);
    out
}

pub fn decode_vox(bytes: &[u8]) -> Result<VoxelGrid, FormatError> {
    if bytes.len() < 40 || &bytes[..4] != b"VOX1" {
        return Err(FormatError::BadMagic { expected: "VOX1" });
    }
    let mut ofs = 4;
    let read_u32 = |ofs: &mut usize| -> u32 {
        let v = u32::from_le_bytes(bytes[*ofs..*ofs + 4].try_into().unwrap());
        *ofs += 4;
        v
    };
    let dims = [
        read_u32(&mut ofs) as usize,
        read_u32(&mut ofs) as usize,
        read_u32(&mut ofs) as usize,
    ];
    let read_f32 = |ofs: &mut usize| -> f64 {
        let v = f32::from_le_bytes(bytes[*ofs..*ofs + 4].try_into().unwrap());
        *ofs += 4;
        v as f64
    };
    let spacing = [read_f32(&mut ofs), read_f32(&mut ofs), read_f32(&mut ofs)];
    let origin = [read_f32(&mut ofs), read_f32(&mut ofs), read_f32(&mut ofs)];
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| FormatError::Corrupt {
            format: "VOX1",
            detail: "dimension overflow".into(),
        })?;
    if bytes.len() != ofs + count {
        return Err(FormatError::Corrupt {
            format: "VOX1",
            detail: format!("expected {} occupancy bytes, found {}", count, bytes.len() - ofs),
        });
    }
    let occupancy = bytes[ofs..].to_vec();
    VoxelGrid::new(dims, spacing, origin, occupancy)
        .map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_vox(path: &Path, grid: &VoxelGrid) -> Result<(), FormatError> {
    atomic_write(path, &encode_vox(grid))
}

pub fn read_vox(path: &Path) -> Result<VoxelGrid, FormatError> {
    decode_vox(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// PCL1: binary point clouds
// ---------------------------------------------------------------------------

pub fn encode_pcl(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.len() * 12);
    out.extend_from_slice(b"PCL1");
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pcl(bytes: &[u8]) -> Result<PointCloud, FormatError> {
    if bytes.len() < 8 || &bytes[..4] != b"PCL1" {
        return Err(FormatError::BadMagic { expected: "PCL1" });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 12 * n {
        return Err(FormatError::Corrupt {
            format: "PCL1",
            detail: format!("expected {} points, payload is {} bytes", n, bytes.len() - 8),
        });
    }
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let base = 8 + 12 * i;
        let mut p = [0.0f64; 3];
        for c in 0..3 {
            p[c] = f32::from_le_bytes(bytes[base + 4 * c..base + 4 * c + 4].try_into().unwrap())
                as f64;
        }
        points.push(p);
    }
    PointCloud::new(points).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_pcl(path: &Path, cloud: &PointCloud) -> Result<(), FormatError> {
    atomic_write(path, &encode_pcl(cloud))
}

pub fn read_pcl(path: &Path) -> Result<PointCloud, FormatError> {
    decode_pcl(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// OFF: ASCII triangle meshes
// ---------------------------------------------------------------------------

pub fn encode_off(mesh: &TriMesh) -> String {
    let mut out = String::new();
    out.push_str("OFF\n");
    out.push_str(&format!(
        "{} {} 0\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    ));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    out
}

pub fn decode_off(text: &str) -> Result<TriMesh, FormatError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let magic = lines.next().ok_or(FormatError::BadMagic { expected: "OFF" })?;
    if magic != "OFF" {
        return Err(FormatError::BadMagic { expected: "OFF" });
    }
    let counts = lines.next().ok_or_else(|| FormatError::Corrupt {
        format: "OFF",
        detail: "missing counts line".into(),
    })?;
    let mut it = counts.split_whitespace();
    let nv: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::Corrupt {
            format: "OFF",
            detail: "bad vertex count".into(),
        })?;
    let nf: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::Corrupt {
            format: "OFF",
            detail: "bad face count".into(),
        })?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| FormatError::Corrupt {
            format: "OFF",
            detail: "truncated vertex list".into(),
        })?;
        let mut p = [0.0f64; 3];
        let mut it = line.split_whitespace();
        for slot in &mut p {
            *slot = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| FormatError::Corrupt {
                    format: "OFF",
                    detail: format!("bad vertex line '{line}'"),
                })?;
        }
        vertices.push(p);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let line = lines.next().ok_or_else(|| FormatError::Corrupt {
            format: "OFF",
            detail: "truncated face list".into(),
        })?;
        let mut it = line.split_whitespace();
        let arity: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        if arity != 3 {
            return Err(FormatError::Corrupt {
                format: "OFF",
                detail: format!("non-triangle face '{line}'"),
            });
        }
        let mut t = [0u32; 3];
        for slot in &mut t {
            *slot = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| FormatError::Corrupt {
                    format: "OFF",
                    detail: format!("bad face line '{line}'"),
                })?;
        }
        triangles.push(t);
    }
    TriMesh::new(vertices, triangles).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_off(path: &Path, mesh: &TriMesh) -> Result<(), FormatError> {
    atomic_write(path, encode_off(mesh).as_bytes())
}

pub fn read_off(path: &Path) -> Result<TriMesh, FormatError> {
    decode_off(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// TNSR: named f64 arrays (parameter checkpoints)
// ---------------------------------------------------------------------------

/// One named array: (name, dims, row-major values).
pub type NamedArray = (String, Vec<u32>, Vec<f64>);

pub fn encode_tnsr(arrays: &[NamedArray]) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(b"TNSR");
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, dims, values) in arrays {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(FormatError::Invalid(format!("name too long: {name}")));
        }
        let expect: usize = dims.iter().map(|&d| d as usize).product();
        if expect != values.len() {
            return Err(FormatError::Invalid(format!(
                "array {name}: dims {:?} do not match {} values",
                dims,
                values.len()
            )));
        }
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tnsr(bytes: &[u8]) -> Result<Vec<NamedArray>, FormatError> {
    let corrupt = |detail: &str| FormatError::Corrupt {
        format: "TNSR",
        detail: detail.to_string(),
    };
    if bytes.len() < 8 || &bytes[..4] != b"TNSR" {
        return Err(FormatError::BadMagic { expected: "TNSR" });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut ofs = 8;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        if ofs + 2 > bytes.len() {
            return Err(corrupt("truncated name length"));
        }
        let name_len = u16::from_le_bytes(bytes[ofs..ofs + 2].try_into().unwrap()) as usize;
        ofs += 2;
        if ofs + name_len + 1 > bytes.len() {
            return Err(corrupt("truncated name"));
        }
        let name = String::from_utf8(bytes[ofs..ofs + name_len].to_vec())
            .map_err(|_| corrupt("name is not UTF-8"))?;
        ofs += name_len;
        let rank = bytes[ofs] as usize;
        ofs += 1;
        if ofs + 4 * rank > bytes.len() {
            return Err(corrupt("truncated dims"));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(bytes[ofs..ofs + 4].try_into().unwrap()));
            ofs += 4;
        }
        let count: usize = dims.iter().map(|&d| d as usize).product();
        if ofs + 8 * count > bytes.len() {
            return Err(corrupt("truncated values"));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_le_bytes(bytes[ofs..ofs + 8].try_into().unwrap()));
            ofs += 8;
        }
        arrays.push((name, dims, values));
    }
    if ofs != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(arrays)
}

pub fn write_tnsr(path: &Path, arrays: &[NamedArray]) -> Result<(), FormatError> {
    atomic_write(path, &encode_tnsr(arrays)?)
}

pub fn read_tnsr(path: &Path) -> Result<Vec<NamedArray>, FormatError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tnsr(&bytes)
}

// ---------------------------------------------------------------------------
// CSV writers
// ---------------------------------------------------------------------------

/// Descriptor CSV: one metadata comment line, then `i,lambda,lambda_hat`.
pub fn shape_dna_csv(dna: &ShapeDna) -> String {
    let residual_max = dna.residuals.iter().cloned().fold(0.0, f64::max);
    let mut out = format!(
        "# V={} F={} area={} tol={} residual_max={}\n",
        dna.vertex_count, dna.triangle_count, dna.area, dna.tol, residual_max
    );
    out.push_str("i,lambda,lambda_hat\n");
    for (i, (l, h)) in dna.eigenvalues.iter().zip(&dna.reweighted).enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, l, h));
    }
    out
}

pub fn parse_shape_dna_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>), FormatError> {
    let mut eigenvalues = Vec::new();
    let mut reweighted = Vec::new();
    for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let _ = parts.next();
        let lam: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FormatError::Corrupt {
                format: "descriptor CSV",
                detail: format!("bad line '{line}'"),
            })?;
        let hat: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FormatError::Corrupt {
                format: "descriptor CSV",
                detail: format!("bad line '{line}'"),
            })?;
        eigenvalues.push(lam);
        reweighted.push(hat);
    }
    Ok((eigenvalues, reweighted))
}

/// Per-vertex eigenfunction table: eigenvalues in a comment, one column per
/// function.
pub fn eigenfunction_csv(functions: &[Vec<f64>], eigenvalues: &[f64]) -> String {
    let mut out = String::from("# lambda:");
    for l in eigenvalues {
        out.push_str(&format!(" {l}"));
    }
    out.push('\n');
    let k = functions.len();
    let header: Vec<String> = (1..=k).map(|i| format!("f{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let rows = functions.first().map_or(0, |f| f.len());
    for r in 0..rows {
        let row: Vec<String> = functions.iter().map(|f| format!("{}", f[r])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Feature dump CSV: id, labels, then the feature columns.
pub fn feature_dump_csv(dump: &FeatureDump) -> String {
    let d = dump.feature_dim();
    let mut out = String::from("id,true_label,predicted_label");
    for i in 0..d {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for i in 0..dump.ids.len() {
        out.push_str(&format!(
            "{},{},{}",
            dump.ids[i], dump.labels[i], dump.predicted[i]
        ));
        for v in &dump.features[i] {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn roc_csv(roc: &RocResult) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for i in 0..roc.thresholds.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            roc.thresholds[i], roc.fpr[i], roc.tpr[i]
        ));
    }
    out
}

pub fn embedding_csv(
    ids: &[String],
    coordinates: &[[f64; 2]],
    labels: &[u8],
    predicted: &[u8],
) -> String {
    let mut out = String::from("id,x,y,true_label,predicted_label\n");
    for i in 0..ids.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            ids[i], coordinates[i][0], coordinates[i][1], labels[i], predicted[i]
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// SVG writers (fixed 800x600 viewport)
// ---------------------------------------------------------------------------

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 600.0;
const SVG_MARGIN: f64 = 60.0;
const CLASS_COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

fn svg_header(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        SVG_W / 2.0,
        xml_escape(title)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Scatter plot of a 2-D embedding colored by binary label.
pub fn svg_scatter(points: &[[f64; 2]], labels: &[u8], title: &str) -> String {
    let mut out = svg_header(title);
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    if !min_x.is_finite() || max_x == min_x {
        max_x = min_x + 1.0;
    }
    if !min_y.is_finite() || max_y == min_y {
        max_y = min_y + 1.0;
    }
    let sx = (SVG_W - 2.0 * SVG_MARGIN) / (max_x - min_x);
    let sy = (SVG_H - 2.0 * SVG_MARGIN) / (max_y - min_y);
    for (p, &label) in points.iter().zip(labels) {
        let x = SVG_MARGIN + (p[0] - min_x) * sx;
        let y = SVG_H - SVG_MARGIN - (p[1] - min_y) * sy;
        out.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
            CLASS_COLORS[label.min(1) as usize]
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// ROC curve with the chance diagonal.
pub fn svg_roc(roc: &RocResult, title: &str) -> String {
    let mut out = svg_header(&format!("{title} (AUC = {:.4})", roc.auc));
    let to_px = |f: f64, t: f64| -> (f64, f64) {
        (
            SVG_MARGIN + f * (SVG_W - 2.0 * SVG_MARGIN),
            SVG_H - SVG_MARGIN - t * (SVG_H - 2.0 * SVG_MARGIN),
        )
    };
    // Axes.
    let (x0, y0) = to_px(0.0, 0.0);
    let (x1, y1) = to_px(1.0, 1.0);
    out.push_str(&format!(
        "<rect x=\"{x0}\" y=\"{y1}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        x1 - x0,
        y0 - y1
    ));
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"#bbb\" \
         stroke-dasharray=\"6 4\"/>\n"
    ));
    let mut path = String::new();
    for i in 0..roc.fpr.len() {
        let (x, y) = to_px(roc.fpr[i], roc.tpr[i]);
        path.push_str(&format!("{x:.2},{y:.2} "));
    }
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
        path.trim_end(),
        CLASS_COLORS[0]
    ));
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    #[test]
    fn vox_round_trip() {
        let mut grid = VoxelGrid::zeros([3, 4, 5], [1.0, 0.5, 2.0], [1.0, -2.0, 3.5]);
        grid.set(1, 2, 3, 1);
        grid.set(0, 0, 0, 1);
        let bytes = encode_vox(&grid);
        let back = decode_vox(&bytes).unwrap();
        assert_eq!(grid, back);
        assert!(matches!(
            decode_vox(b"NOPE"),
            Err(FormatError::BadMagic { expected: "VOX1" })
        ));
        // Truncated payload is rejected.
        assert!(decode_vox(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn pcl_round_trip_is_f32_exact() {
        let cloud = PointCloud::new(vec![[1.5, -2.25, 0.125], [3.0, 4.5, -6.75]]).unwrap();
        let back = decode_pcl(&encode_pcl(&cloud)).unwrap();
        assert_eq!(cloud, back);
    }

    #[test]
    fn off_round_trip() {
        let mesh = icosphere(1, 2.0);
        let text = encode_off(&mesh);
        let back = decode_off(&text).unwrap();
        assert_eq!(mesh.triangles, back.triangles);
        for (a, b) in mesh.vertices.iter().zip(&back.vertices) {
            for c in 0..3 {
                assert_eq!(a[c], b[c], "shortest-roundtrip float text must be exact");
            }
        }
    }

    #[test]
    fn tnsr_round_trip() {
        let arrays: Vec<NamedArray> = vec![
            ("layer.w".into(), vec![2, 3], vec![1.0, -2.0, 3.5, 0.25, 1e-30, 7.0]),
            ("layer.b".into(), vec![3], vec![0.0, -0.5, 2.0f64.powi(-40)]),
        ];
        let bytes = encode_tnsr(&arrays).unwrap();
        let back = decode_tnsr(&bytes).unwrap();
        assert_eq!(arrays, back);
        // Bitwise stability of a second encode.
        assert_eq!(bytes, encode_tnsr(&back).unwrap());
    }

    #[test]
    fn atomic_write_then_hash() {
        let dir = std::env::temp_dir().join("abdoshape-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.bin");
        atomic_write(&path, b"hello").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"hello");
        let h1 = hash_file(&path).unwrap();
        atomic_write(&path, b"hello").unwrap();
        assert_eq!(h1, hash_file(&path).unwrap());
        atomic_write(&path, b"other").unwrap();
        assert_ne!(h1, hash_file(&path).unwrap());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_writers_are_exact_and_parseable() {
        let dna = ShapeDna {
            eigenvalues: vec![2.0000000000000004, 6.1],
            reweighted: vec![2.0000000000000004, 3.05],
            residuals: vec![1e-9, 2e-9],
            vertex_count: 10,
            triangle_count: 16,
            area: 12.57,
            tol: 1e-8,
        };
        let text = shape_dna_csv(&dna);
        assert!(text.starts_with("# V=10 F=16"));
        let (lam, hat) = parse_shape_dna_csv(&text).unwrap();
        assert_eq!(lam, dna.eigenvalues);
        assert_eq!(hat, dna.reweighted);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let points = vec![[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]];
        let labels = vec![0, 1, 0];
        let svg = svg_scatter(&points, &labels, "embedding <test>");
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains("viewBox=\"0 0 800 600\""));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;test&gt;"));
        // Balanced tags: every circle is self-closing, one svg element.
        assert_eq!(svg.matches("<svg").count(), 1);
        assert_eq!(svg.matches("</svg>").count(), 1);
    }
}
