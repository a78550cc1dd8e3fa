//! File I/O: PLY point clouds, OBJ meshes, PGM masks, and pose sidecar JSON.
//!
//! PLY is the interchange format for clouds (ASCII and binary little
//! endian), OBJ for meshes, P5 PGM for binary masks. Camera intrinsics and
//! per-frame extrinsics live in a JSON sidecar so the frame/mask ordering
//! is carried by a single source of truth.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, RgbColor, RigidTransform};
use crate::mesh::TriangleMesh;

/// Binary 2D mask; 0 = background, 255 = object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.values[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.values[v * self.width + u] = if on { 255 } else { 0 };
    }

    pub fn is_set(&self, u: usize, v: usize) -> bool {
        self.get(u, v) == 255
    }

    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v == 255).count()
    }
}

/// Camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// One camera frame: image/mask name plus world-from-camera pose.
#[derive(Debug, Clone)]
pub struct PoseFrame {
    pub image_name: String,
    pub t_world_cam: RigidTransform,
}

/// Sidecar pose file: shared intrinsics plus ordered frames.
///
/// Frame order is the single source of truth for image/mask ordering.
#[derive(Debug, Clone)]
pub struct PoseFile {
    pub intrinsics: Intrinsics,
    pub frames: Vec<PoseFrame>,
}

#[derive(Serialize, Deserialize)]
struct PoseFrameJson {
    image_name: String,
    t_world_cam: [[f64; 4]; 4],
}

#[derive(Serialize, Deserialize)]
struct PoseFileJson {
    intrinsics: Intrinsics,
    frames: Vec<PoseFrameJson>,
}

/// Reads and validates a pose JSON file.
pub fn read_pose_file(path: &Path) -> Result<PoseFile> {
    let raw: PoseFileJson = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if !(raw.intrinsics.fx > 0.0) || !(raw.intrinsics.fy > 0.0) {
        return Err(Error::ValidationError(format!(
            "focal lengths must be positive (fx={}, fy={})",
            raw.intrinsics.fx, raw.intrinsics.fy
        )));
    }
    if raw.frames.is_empty() {
        return Err(Error::ValidationError("pose file has no frames".into()));
    }
    let mut frames = Vec::with_capacity(raw.frames.len());
    for (i, f) in raw.frames.iter().enumerate() {
        let mut m = Matrix4::zeros();
        for r in 0..4 {
            for c in 0..4 {
                m[(r, c)] = f.t_world_cam[r][c];
            }
        }
        let t = RigidTransform::from_matrix(&m, 1e-4).map_err(|e| {
            Error::ValidationError(format!(
                "frame {} ({}): {}",
                i, f.image_name, e
            ))
        })?;
        frames.push(PoseFrame {
            image_name: f.image_name.clone(),
            t_world_cam: t,
        });
    }
    Ok(PoseFile {
        intrinsics: raw.intrinsics,
        frames,
    })
}

/// Writes a pose JSON file with row-major 4x4 matrices.
pub fn write_pose_file(pose_file: &PoseFile, path: &Path) -> Result<()> {
    let raw = PoseFileJson {
        intrinsics: pose_file.intrinsics,
        frames: pose_file
            .frames
            .iter()
            .map(|f| {
                let m = f.t_world_cam.matrix();
                let mut rows = [[0.0; 4]; 4];
                for r in 0..4 {
                    for c in 0..4 {
                        rows[r][c] = m[(r, c)];
                    }
                }
                PoseFrameJson {
                    image_name: f.image_name.clone(),
                    t_world_cam: rows,
                }
            })
            .collect(),
    };
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, &raw)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyType {
    F32,
    F64,
    U8,
}

impl PlyType {
    fn parse(s: &str) -> Option<PlyType> {
        match s {
            "float" | "float32" => Some(PlyType::F32),
            "double" | "float64" => Some(PlyType::F64),
            "uchar" | "uint8" => Some(PlyType::U8),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            PlyType::F32 => 4,
            PlyType::F64 => 8,
            PlyType::U8 => 1,
        }
    }
}

/// Reads an ASCII or binary-little-endian PLY point cloud.
///
/// Recognized properties: `x,y,z` (float/double), `red,green,blue` (uchar),
/// `nx,ny,nz` (float/double). Other elements are skipped; unknown property
/// types in the vertex element are an error.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut reader = BufReader::new(File::open(path)?);

    // Header is always ASCII lines.
    let mut line_no = 0usize;
    fn read_line(reader: &mut BufReader<File>, line_no: &mut usize) -> Result<String> {
        let mut buf = Vec::new();
        let n = read_until_newline(reader, &mut buf)?;
        if n == 0 {
            return Err(Error::ParseError {
                line: *line_no,
                message: "unexpected end of file in header".into(),
            });
        }
        *line_no += 1;
        Ok(String::from_utf8_lossy(&buf).trim().to_string())
    }

    let magic = read_line(&mut reader, &mut line_no)?;
    if magic != "ply" {
        return Err(Error::ParseError {
            line: 1,
            message: format!("expected 'ply' magic, got '{magic}'"),
        });
    }

    let mut format = None;
    let mut vertex_count = 0usize;
    // (name, type) in declaration order for the vertex element.
    let mut vertex_props: Vec<(String, PlyType)> = Vec::new();
    let mut in_vertex_element = false;
    let mut trailing_elements = false;

    loop {
        let line = read_line(&mut reader, &mut line_no)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = match tokens.get(1).copied() {
                    Some("ascii") => Some(PlyFormat::Ascii),
                    Some("binary_little_endian") => Some(PlyFormat::BinaryLittleEndian),
                    other => {
                        return Err(Error::UnsupportedFormat(format!(
                            "PLY format '{}' not supported",
                            other.unwrap_or("")
                        )))
                    }
                };
            }
            Some("element") => {
                if tokens.get(1).copied() == Some("vertex") {
                    in_vertex_element = true;
                    vertex_count = tokens
                        .get(2)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::ParseError {
                            line: line_no,
                            message: "bad vertex count".into(),
                        })?;
                } else {
                    in_vertex_element = false;
                    trailing_elements = true;
                }
            }
            Some("property") => {
                if in_vertex_element {
                    let (ty, name) = match (tokens.get(1), tokens.get(2)) {
                        (Some(t), Some(n)) => (*t, *n),
                        _ => {
                            return Err(Error::ParseError {
                                line: line_no,
                                message: "malformed property line".into(),
                            })
                        }
                    };
                    let ty = PlyType::parse(ty).ok_or_else(|| {
                        Error::UnsupportedFormat(format!(
                            "vertex property type '{ty}' not supported"
                        ))
                    })?;
                    vertex_props.push((name.to_string(), ty));
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::ParseError {
                    line: line_no,
                    message: format!("unrecognized header keyword '{other}'"),
                })
            }
        }
    }

    let format = format.ok_or(Error::ParseError {
        line: line_no,
        message: "missing format line".into(),
    })?;
    if trailing_elements && format == PlyFormat::BinaryLittleEndian {
        // Vertex data must come first to be parseable without list support.
        return Err(Error::UnsupportedFormat(
            "binary PLY with non-vertex elements before vertices".into(),
        ));
    }

    let prop_index = |name: &str| vertex_props.iter().position(|(n, _)| n == name);
    let (xi, yi, zi) = match (prop_index("x"), prop_index("y"), prop_index("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(Error::ParseError {
                line: line_no,
                message: "vertex element lacks x/y/z properties".into(),
            })
        }
    };
    let color_idx = match (prop_index("red"), prop_index("green"), prop_index("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };
    let normal_idx = match (prop_index("nx"), prop_index("ny"), prop_index("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut cloud = PointCloud {
        points: Vec::with_capacity(vertex_count),
        colors: color_idx.map(|_| Vec::with_capacity(vertex_count)),
        normals: normal_idx.map(|_| Vec::with_capacity(vertex_count)),
        labels: None,
    };

    let mut row = vec![0.0f64; vertex_props.len()];
    match format {
        PlyFormat::Ascii => {
            for _ in 0..vertex_count {
                let line = read_line(&mut reader, &mut line_no)?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < vertex_props.len() {
                    return Err(Error::ParseError {
                        line: line_no,
                        message: format!(
                            "expected {} fields, got {}",
                            vertex_props.len(),
                            fields.len()
                        ),
                    });
                }
                for (i, f) in fields.iter().take(vertex_props.len()).enumerate() {
                    row[i] = f.parse().map_err(|_| Error::ParseError {
                        line: line_no,
                        message: format!("bad numeric field '{f}'"),
                    })?;
                }
                push_vertex(&mut cloud, &row, (xi, yi, zi), color_idx, normal_idx);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let row_size: usize = vertex_props.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; row_size];
            for _ in 0..vertex_count {
                reader.read_exact(&mut buf)?;
                let mut off = 0;
                for (i, (_, ty)) in vertex_props.iter().enumerate() {
                    row[i] = match ty {
                        PlyType::F32 => f32::from_le_bytes(
                            buf[off..off + 4].try_into().unwrap(),
                        ) as f64,
                        PlyType::F64 => {
                            f64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
                        }
                        PlyType::U8 => buf[off] as f64,
                    };
                    off += ty.size();
                }
                push_vertex(&mut cloud, &row, (xi, yi, zi), color_idx, normal_idx);
            }
        }
    }
    Ok(cloud)
}

fn push_vertex(
    cloud: &mut PointCloud,
    row: &[f64],
    xyz: (usize, usize, usize),
    color_idx: Option<(usize, usize, usize)>,
    normal_idx: Option<(usize, usize, usize)>,
) {
    cloud
        .points
        .push(Point3::new(row[xyz.0], row[xyz.1], row[xyz.2]));
    if let (Some(colors), Some((r, g, b))) = (&mut cloud.colors, color_idx) {
        colors.push(RgbColor::new(
            row[r] / 255.0,
            row[g] / 255.0,
            row[b] / 255.0,
        ));
    }
    if let (Some(normals), Some((a, b, c))) = (&mut cloud.normals, normal_idx) {
        normals.push(Vector3::new(row[a], row[b], row[c]));
    }
}

fn read_until_newline(reader: &mut BufReader<File>, buf: &mut Vec<u8>) -> Result<usize> {
    Ok(reader.read_until(b'\n', buf)?)
}

/// Writes a point cloud as PLY. Positions and normals are float32, colors
/// uchar, so round trips are lossless at float32 precision.
pub fn write_ply(cloud: &PointCloud, path: &Path, binary: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let format = if binary { "binary_little_endian" } else { "ascii" };
    write!(w, "ply\nformat {format} 1.0\n")?;
    write!(w, "element vertex {}\n", cloud.len())?;
    write!(w, "property float x\nproperty float y\nproperty float z\n")?;
    if cloud.colors.is_some() {
        write!(w, "property uchar red\nproperty uchar green\nproperty uchar blue\n")?;
    }
    if cloud.normals.is_some() {
        write!(w, "property float nx\nproperty float ny\nproperty float nz\n")?;
    }
    write!(w, "end_header\n")?;

    let color_byte = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        if binary {
            for v in [p.x, p.y, p.z] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
            if let Some(colors) = &cloud.colors {
                let c = colors[i];
                w.write_all(&[color_byte(c.r), color_byte(c.g), color_byte(c.b)])?;
            }
            if let Some(normals) = &cloud.normals {
                let n = normals[i];
                for v in [n.x, n.y, n.z] {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        } else {
            write!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
            if let Some(colors) = &cloud.colors {
                let c = colors[i];
                write!(w, " {} {} {}", color_byte(c.r), color_byte(c.g), color_byte(c.b))?;
            }
            if let Some(normals) = &cloud.normals {
                let n = normals[i];
                write!(w, " {} {} {}", n.x as f32, n.y as f32, n.z as f32)?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// OBJ
// ---------------------------------------------------------------------------

/// Reads an OBJ mesh; polygons with more than 3 vertices are fan-triangulated.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let reader = BufReader::new(File::open(path)?);
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("v") => {
                if tokens.len() < 4 {
                    return Err(Error::ParseError {
                        line: line_no,
                        message: "vertex with fewer than 3 coordinates".into(),
                    });
                }
                let coords: Vec<f64> = tokens[1..4]
                    .iter()
                    .map(|t| {
                        t.parse().map_err(|_| Error::ParseError {
                            line: line_no,
                            message: format!("bad coordinate '{t}'"),
                        })
                    })
                    .collect::<Result<_>>()?;
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(tokens.len() - 1);
                for t in &tokens[1..] {
                    // "v", "v/vt", "v/vt/vn", "v//vn" all start with the index.
                    let first = t.split('/').next().unwrap_or("");
                    let v: i64 = first.parse().map_err(|_| Error::ParseError {
                        line: line_no,
                        message: format!("bad face index '{t}'"),
                    })?;
                    if v <= 0 {
                        return Err(Error::ParseError {
                            line: line_no,
                            message: format!("non-positive vertex index {v}"),
                        });
                    }
                    idx.push((v - 1) as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::ParseError {
                        line: line_no,
                        message: "face with fewer than 3 vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    for f in &faces {
        if f.iter().any(|&v| v >= vertices.len()) {
            return Err(Error::ParseError {
                line: 0,
                message: "face references vertex beyond vertex count".into(),
            });
        }
    }
    Ok(TriangleMesh::new(vertices, faces))
}

/// Writes a triangle mesh as OBJ (v/f records only).
pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PGM masks
// ---------------------------------------------------------------------------

/// Reads a P5 binary PGM as a mask; values are thresholded at 128.
pub fn read_pgm_mask(path: &Path) -> Result<MaskImage> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    if !data.starts_with(b"P5") {
        return Err(Error::UnsupportedFormat(
            "mask file is not a P5 binary PGM".into(),
        ));
    }
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // with '#' comments allowed.
    let mut pos = 2;
    let mut tokens = Vec::with_capacity(3);
    while tokens.len() < 3 && pos < data.len() {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(
            std::str::from_utf8(&data[start..pos])
                .ok()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::ParseError {
                    line: 0,
                    message: "bad PGM header token".into(),
                })?,
        );
    }
    if tokens.len() < 3 {
        return Err(Error::ParseError {
            line: 0,
            message: "truncated PGM header".into(),
        });
    }
    let (width, height, maxval) = (tokens[0], tokens[1], tokens[2]);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {maxval} not supported (need 255)"
        )));
    }
    pos += 1; // single whitespace after maxval
    if data.len() < pos + width * height {
        return Err(Error::ParseError {
            line: 0,
            message: "truncated PGM pixel data".into(),
        });
    }
    let values = data[pos..pos + width * height]
        .iter()
        .map(|&b| if b >= 128 { 255 } else { 0 })
        .collect();
    Ok(MaskImage {
        width,
        height,
        values,
    })
}

/// Writes a mask as a P5 binary PGM with maxval 255.
pub fn write_pgm_mask(mask: &MaskImage, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    w.write_all(&mask.values)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn sample_cloud() -> PointCloud {
        PointCloud {
            points: vec![
                Point3::new(0.1, 0.2, 0.3),
                Point3::new(-1.5, 2.25, 0.0),
                Point3::new(4.0, -3.0, 7.5),
            ],
            colors: Some(vec![
                RgbColor::new(1.0, 0.0, 0.0),
                RgbColor::new(0.0, 1.0, 0.0),
                RgbColor::new(0.2, 0.4, 0.6),
            ]),
            normals: None,
            labels: None,
        }
    }

    #[test]
    fn ply_round_trip_ascii_and_binary() {
        let dir = tempdir().unwrap();
        let cloud = sample_cloud();
        for (name, binary) in [("a.ply", false), ("b.ply", true)] {
            let path = dir.path().join(name);
            write_ply(&cloud, &path, binary).unwrap();
            let back = read_ply(&path).unwrap();
            assert_eq!(back.len(), cloud.len());
            for (a, b) in back.points.iter().zip(&cloud.points) {
                assert!((a - b).norm() < 1e-6);
            }
            let colors = back.colors.unwrap();
            for (a, b) in colors.iter().zip(cloud.colors.as_ref().unwrap()) {
                assert!((a.r - b.r).abs() < 1.0 / 255.0);
                assert!((a.g - b.g).abs() < 1.0 / 255.0);
                assert!((a.b - b.b).abs() < 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn ply_ascii_comments_ignored() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment generated for a test\nelement vertex 2\n\
             property float x\nproperty float y\nproperty float z\nend_header\n\
             0 0 0\n1 2 3\n",
        )
        .unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert!((cloud.points[1] - Point3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn ply_binary_reference_file() {
        // Reference binary PLY assembled byte-by-byte, independent of write_ply.
        let dir = tempdir().unwrap();
        let path = dir.path().join("ref.ply");
        let n = 5usize;
        let mut bytes = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {n}\n\
             property float x\nproperty float y\nproperty float z\nend_header\n"
        )
        .into_bytes();
        for i in 0..n {
            for v in [i as f32, 2.0 * i as f32, -1.0] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(&path, bytes).unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), n);
        assert!((cloud.points[3] - Point3::new(3.0, 6.0, -1.0)).norm() < 1e-6);
    }

    #[test]
    fn ply_malformed_header_reports_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, "ply\nformat ascii 1.0\nbogus line here\n").unwrap();
        match read_ply(&path) {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn obj_tetrahedron_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tet.obj");
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        );
        write_obj(&mesh, &path).unwrap();
        let back = read_obj(&path).unwrap();
        assert_eq!(back.vertices.len(), 4);
        assert_eq!(back.faces.len(), 4);
    }

    #[test]
    fn obj_quad_fan_triangulated() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("quad.obj");
        std::fs::write(
            &path,
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
        )
        .unwrap();
        let mesh = read_obj(&path).unwrap();
        assert_eq!(mesh.faces.len(), 2);
        assert_eq!(mesh.faces[0], [0, 1, 2]);
        assert_eq!(mesh.faces[1], [0, 2, 3]);
    }

    #[test]
    fn obj_non_positive_index_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("neg.obj");
        std::fs::write(&path, "v 0 0 0\nf 0 1 1\n").unwrap();
        assert!(matches!(read_obj(&path), Err(Error::ParseError { .. })));
    }

    #[test]
    fn obj_euler_characteristic_preserved() {
        // Sphere-like mesh with thousands of faces; V - E + F must survive
        // a write/read cycle.
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let rings = 50;
        let segs = 100;
        vertices.push(Point3::new(0.0, 0.0, 1.0));
        for r in 1..rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segs {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / segs as f64;
                vertices.push(Point3::new(
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                ));
            }
        }
        vertices.push(Point3::new(0.0, 0.0, -1.0));
        let vid = |r: usize, s: usize| 1 + (r - 1) * segs + (s % segs);
        for s in 0..segs {
            faces.push([0, vid(1, s), vid(1, s + 1)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segs {
                faces.push([vid(r, s), vid(r + 1, s), vid(r + 1, s + 1)]);
                faces.push([vid(r, s), vid(r + 1, s + 1), vid(r, s + 1)]);
            }
        }
        let south = vertices.len() - 1;
        for s in 0..segs {
            faces.push([south, vid(rings - 1, s + 1), vid(rings - 1, s)]);
        }
        let mesh = TriangleMesh::new(vertices, faces);
        assert!(mesh.faces.len() > 9000);
        let chi_before = mesh.euler_characteristic();
        let dir = tempdir().unwrap();
        let path = dir.path().join("sphere.obj");
        write_obj(&mesh, &path).unwrap();
        let back = read_obj(&path).unwrap();
        assert_eq!(back.euler_characteristic(), chi_before);
        assert_eq!(chi_before, 2);
    }

    #[test]
    fn pgm_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        // All-zero mask.
        let zero = MaskImage::new(4, 4);
        write_pgm_mask(&zero, &path).unwrap();
        assert_eq!(read_pgm_mask(&path).unwrap(), zero);
        // Checkerboard.
        let mut check = MaskImage::new(6, 4);
        for v in 0..4 {
            for u in 0..6 {
                check.set(u, v, (u + v) % 2 == 0);
            }
        }
        write_pgm_mask(&check, &path).unwrap();
        assert_eq!(read_pgm_mask(&path).unwrap(), check);
    }

    #[test]
    fn pgm_threshold_on_read() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, [b"P5\n2 1\n255\n".as_slice(), &[200u8, 60u8]].concat()).unwrap();
        let mask = read_pgm_mask(&path).unwrap();
        assert_eq!(mask.values, vec![255, 0]);
    }

    #[test]
    fn pgm_non_p5_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p2.pgm");
        std::fs::write(&path, "P2\n1 1\n255\n0\n").unwrap();
        assert!(matches!(
            read_pgm_mask(&path),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn pose_file_round_trip_and_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("poses.json");
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let frames: Vec<PoseFrame> = (0..5)
            .map(|i| {
                let axis = Unit::new_normalize(nalgebra::Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ));
                PoseFrame {
                    image_name: format!("frame_{i:04}.png"),
                    t_world_cam: RigidTransform::from_parts(
                        Rotation3::from_axis_angle(&axis, rng.gen_range(-3.0..3.0)),
                        nalgebra::Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                    ),
                }
            })
            .collect();
        let pf = PoseFile {
            intrinsics: Intrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0 },
            frames: frames.clone(),
        };
        write_pose_file(&pf, &path).unwrap();
        let back = read_pose_file(&path).unwrap();
        assert_eq!(back.frames.len(), 5);
        for (a, b) in back.frames.iter().zip(&frames) {
            assert!((a.t_world_cam.matrix() - b.t_world_cam.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn pose_file_single_identity_frame() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.json");
        std::fs::write(
            &path,
            r#"{"intrinsics":{"fx":400,"fy":400,"cx":320,"cy":240},
               "frames":[{"image_name":"a.png",
               "t_world_cam":[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        )
        .unwrap();
        let pf = read_pose_file(&path).unwrap();
        assert_eq!(pf.frames.len(), 1);
    }

    #[test]
    fn pose_file_negative_fx_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("badfx.json");
        std::fs::write(
            &path,
            r#"{"intrinsics":{"fx":-1,"fy":400,"cx":320,"cy":240},
               "frames":[{"image_name":"a.png",
               "t_world_cam":[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        )
        .unwrap();
        assert!(matches!(
            read_pose_file(&path),
            Err(Error::ValidationError(_))
        ));
    }

    #[test]
    fn pose_file_bad_rotation_names_frame() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("badrot.json");
        std::fs::write(
            &path,
            r#"{"intrinsics":{"fx":400,"fy":400,"cx":320,"cy":240},
               "frames":[{"image_name":"ok.png",
               "t_world_cam":[[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]},
               {"image_name":"skewed.png",
               "t_world_cam":[[1,0.5,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#,
        )
        .unwrap();
        match read_pose_file(&path) {
            Err(Error::ValidationError(msg)) => assert!(msg.contains("skewed.png")),
            other => panic!("expected ValidationError, got {other:?}"),
        }
    }
}
