//! Triangle meshes: construction from point clouds, feature-aware
//! smoothing, decimation, convex hulls, and asset canonicalization.

mod bpa;
mod decimate;
mod hull;

pub use bpa::{reconstruct_mesh, ReconstructParams};
pub use decimate::decimate;
pub use hull::{convex_hull, hull_outside_distance};

use std::collections::HashSet;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::nn::NnIndex;

/// Indexed triangle mesh with per-vertex normals.
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vector3<f64>>,
}

impl TriangleMesh {
    /// Builds a mesh and computes area-weighted vertex normals.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        let mut mesh = Self {
            vertices,
            faces,
            vertex_normals: Vec::new(),
        };
        mesh.recompute_normals();
        mesh
    }

    pub fn face_normal(&self, f: &[usize; 3]) -> Vector3<f64> {
        let a = self.vertices[f[0]];
        let b = self.vertices[f[1]];
        let c = self.vertices[f[2]];
        (b - a).cross(&(c - a))
    }

    /// Angle-weighted vertex normals (each face contributes its unit normal
    /// scaled by its incident angle at the vertex), so the result does not
    /// depend on how flat regions happen to be triangulated; zero-ring
    /// vertices get +z.
    pub fn recompute_normals(&mut self) {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let n = self.face_normal(f);
            let len = n.norm();
            if len < 1e-18 {
                continue;
            }
            let unit = n / len;
            for k in 0..3 {
                let v = f[k];
                let e1 = (self.vertices[f[(k + 1) % 3]] - self.vertices[v]).normalize();
                let e2 = (self.vertices[f[(k + 2) % 3]] - self.vertices[v]).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                normals[v] += unit * angle;
            }
        }
        self.vertex_normals = normals
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 1e-14 {
                    n / len
                } else {
                    Vector3::z()
                }
            })
            .collect();
    }

    pub fn surface_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_normal(f).norm() * 0.5).sum()
    }

    /// Unique undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges = HashSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Edges referenced by exactly one face.
    pub fn boundary_edge_count(&self) -> usize {
        let mut counts: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        counts.values().filter(|&&c| c == 1).count()
    }

    /// Drops zero-area faces and faces with repeated vertices.
    pub fn remove_degenerate_faces(&mut self, area_eps: f64) {
        let vertices = std::mem::take(&mut self.vertices);
        self.faces.retain(|f| {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return false;
            }
            let a = vertices[f[0]];
            let b = vertices[f[1]];
            let c = vertices[f[2]];
            (b - a).cross(&(c - a)).norm() * 0.5 > area_eps
        });
        self.vertices = vertices;
    }

    /// Drops vertices not referenced by any face, remapping indices.
    pub fn compact(&mut self) {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut next = 0;
        for f in &self.faces {
            for &v in f {
                if remap[v] == usize::MAX {
                    remap[v] = next;
                    next += 1;
                }
            }
        }
        let mut vertices = vec![Point3::origin(); next];
        for (old, &new) in remap.iter().enumerate() {
            if new != usize::MAX {
                vertices[new] = self.vertices[old];
            }
        }
        for f in &mut self.faces {
            for v in f {
                *v = remap[*v];
            }
        }
        self.vertices = vertices;
        self.recompute_normals();
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.vertices.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.vertices.iter().map(|v| v.coords).sum();
        Some(Point3::from(sum / self.vertices.len() as f64))
    }

    pub fn translated(&self, offset: Vector3<f64>) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            faces: self.faces.clone(),
            vertex_normals: self.vertex_normals.clone(),
        }
    }
}

/// Parameters for the gated Laplacian smoothing step.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SmoothingParams {
    /// Feature threshold in degrees; neighbor pairs whose normals differ by
    /// more than this do not average across.
    pub theta_th_deg: f64,
    pub iterations: usize,
    /// Step size in (0,1).
    pub lambda: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            theta_th_deg: 30.0,
            iterations: 10,
            lambda: 0.5,
        }
    }
}

/// Selective Laplacian smoothing with an angle-based gate.
///
/// Per iteration each vertex moves toward the average of its 1-ring
/// neighbors whose normals are within `theta_th` of its own normal; the
/// update is Jacobi-style (double buffered) and normals are recomputed
/// after each iteration. Vertices with no admissible neighbor stay put.
pub fn smooth_feature_aware(mesh: &TriangleMesh, params: &SmoothingParams) -> TriangleMesh {
    let mut mesh = mesh.clone();
    let cos_th = params.theta_th_deg.to_radians().cos();
    let neighbors = one_ring(&mesh);
    for _ in 0..params.iterations {
        let mut next = mesh.vertices.clone();
        for (i, ring) in neighbors.iter().enumerate() {
            let ni = mesh.vertex_normals[i];
            let mut sum = Vector3::zeros();
            let mut weight = 0.0;
            for &j in ring {
                // Clamp before comparing; rounding can push the dot past 1.
                let dot = ni.dot(&mesh.vertex_normals[j]).clamp(-1.0, 1.0);
                if dot >= cos_th {
                    sum += mesh.vertices[j] - mesh.vertices[i];
                    weight += 1.0;
                }
            }
            if weight > 0.0 {
                next[i] = mesh.vertices[i] + params.lambda * (sum / weight);
            }
        }
        mesh.vertices = next;
        mesh.recompute_normals();
    }
    mesh
}

pub(crate) fn one_ring(mesh: &TriangleMesh) -> Vec<Vec<usize>> {
    let mut neighbors: Vec<HashSet<usize>> = vec![HashSet::new(); mesh.vertices.len()];
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            neighbors[a].insert(b);
            neighbors[b].insert(a);
        }
    }
    neighbors
        .into_iter()
        .map(|s| {
            let mut v: Vec<usize> = s.into_iter().collect();
            v.sort_unstable();
            v
        })
        .collect()
}

/// Per-point PCA normals over `k` nearest neighbors, oriented away from
/// the cloud centroid. Degenerate neighborhoods fall back to the radial
/// direction.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if cloud.len() < k + 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least k+1={} points for normal estimation, got {}",
            k + 1,
            cloud.len()
        )));
    }
    let index = NnIndex::build(cloud)?;
    let centroid = cloud.centroid().unwrap();
    let normals = cloud
        .points
        .iter()
        .map(|p| {
            let nbrs = index.knn(p, k + 1);
            let mean: Vector3<f64> = nbrs
                .iter()
                .map(|n| cloud.points[n.index].coords)
                .sum::<Vector3<f64>>()
                / nbrs.len() as f64;
            let mut cov = nalgebra::Matrix3::zeros();
            for n in &nbrs {
                let d = cloud.points[n.index].coords - mean;
                cov += d * d.transpose();
            }
            let eig = nalgebra::SymmetricEigen::new(cov);
            // Smallest-eigenvalue direction is the surface normal.
            let mut min_i = 0;
            for i in 1..3 {
                if eig.eigenvalues[i] < eig.eigenvalues[min_i] {
                    min_i = i;
                }
            }
            let radial = p - centroid;
            let mut n = eig.eigenvectors.column(min_i).into_owned();
            if n.norm() < 1e-12 || !n.iter().all(|x| x.is_finite()) {
                n = if radial.norm() > 1e-12 {
                    radial.normalize()
                } else {
                    Vector3::z()
                };
            } else {
                n.normalize_mut();
                if n.dot(&radial) < 0.0 {
                    n = -n;
                }
            }
            n
        })
        .collect();
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok(out)
}

/// Centers a mesh/cloud pair at the cloud's centroid, returning the
/// removed offset so world poses stay recoverable.
pub fn canonicalize_asset(
    mesh: &TriangleMesh,
    cloud: &PointCloud,
) -> Result<(TriangleMesh, PointCloud, Vector3<f64>)> {
    let centroid = cloud
        .centroid()
        .ok_or(Error::EmptyInput("cannot canonicalize an empty cloud"))?;
    let offset = centroid.coords;
    Ok((
        mesh.translated(-offset),
        cloud.translated(-offset),
        offset.into(),
    ))
}

/// Distance from a point to a triangle (closest point on the triangle).
pub fn point_triangle_distance(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> f64 {
    // Ericson, Real-Time Collision Detection, closest-point-on-triangle.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (p - a).norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (p - b).norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (p - c).norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

/// Distance from a point to the closest face of a mesh.
pub fn point_mesh_distance(p: &Point3<f64>, mesh: &TriangleMesh) -> f64 {
    mesh.faces
        .iter()
        .map(|f| {
            point_triangle_distance(
                p,
                &mesh.vertices[f[0]],
                &mesh.vertices[f[1]],
                &mesh.vertices[f[2]],
            )
        })
        .fold(f64::INFINITY, f64::min)
    }

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    /// Regular grid mesh over each face of an axis-aligned cube.
    pub(crate) fn cube_mesh(side: f64, divisions: usize) -> TriangleMesh {
        let mut vertices: Vec<Point3<f64>> = Vec::new();
        let mut faces = Vec::new();
        let mut vid = std::collections::HashMap::new();
        let mut get = |vertices: &mut Vec<Point3<f64>>, p: (i64, i64, i64)| -> usize {
            *vid.entry(p).or_insert_with(|| {
                let scale = side / divisions as f64;
                vertices.push(Point3::new(
                    p.0 as f64 * scale,
                    p.1 as f64 * scale,
                    p.2 as f64 * scale,
                ));
                vertices.len() - 1
            })
        };
        let n = divisions as i64;
        // For each of 6 faces build a grid. Axis = fixed coordinate.
        for (axis, level) in [(2, 0), (2, n), (1, 0), (1, n), (0, 0), (0, n)] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: i64, dj: i64| {
                        let (u, v) = (i + di, j + dj);
                        let p = match axis {
                            0 => (level, u, v),
                            1 => (u, level, v),
                            _ => (u, v, level),
                        };
                        p
                    };
                    let p00 = get(&mut vertices, corner(0, 0));
                    let p10 = get(&mut vertices, corner(1, 0));
                    let p01 = get(&mut vertices, corner(0, 1));
                    let p11 = get(&mut vertices, corner(1, 1));
                    faces.push([p00, p10, p11]);
                    faces.push([p00, p11, p01]);
                }
            }
        }
        // Orient every face outward so vertex normals are meaningful.
        let center = Vector3::new(side / 2.0, side / 2.0, side / 2.0);
        for f in &mut faces {
            let a = vertices[f[0]];
            let b = vertices[f[1]];
            let c = vertices[f[2]];
            let n = (b - a).cross(&(c - a));
            let mid = (a.coords + b.coords + c.coords) / 3.0;
            if n.dot(&(mid - center)) < 0.0 {
                f.swap(1, 2);
            }
        }
        TriangleMesh::new(vertices, faces)
    }

    #[test]
    fn cube_mesh_is_closed() {
        let mesh = cube_mesh(1.0, 8);
        assert_eq!(mesh.boundary_edge_count(), 0);
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!((mesh.surface_area() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn estimate_normals_on_sphere_shell_is_radial() {
        let cloud = synth::sample_sphere_shell(0.05, 4000, 42);
        let with_normals = estimate_normals(&cloud, 16).unwrap();
        let normals = with_normals.normals.unwrap();
        let mut ok = 0;
        for (p, n) in cloud.points.iter().zip(&normals) {
            let radial = p.coords.normalize();
            if n.dot(&radial).abs().acos().to_degrees() < 5.0 {
                ok += 1;
            }
        }
        assert!(ok as f64 / cloud.len() as f64 > 0.99);
    }

    #[test]
    fn estimate_normals_on_plane() {
        let mut points = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                points.push(Point3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0));
            }
        }
        let cloud = PointCloud::from_points(points);
        let out = estimate_normals(&cloud, 8).unwrap();
        for n in out.normals.unwrap() {
            assert!(n.z.abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn estimate_normals_k_too_large() {
        let cloud = PointCloud::from_points(vec![Point3::origin(); 5]);
        assert!(estimate_normals(&cloud, 10).is_err());
    }

    #[test]
    fn smoothing_reduces_plane_noise() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 40usize;
        let sigma = 0.002;
        let mut vertices = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let noise: f64 = (rng.gen::<f64>() - 0.5) * 2.0 * sigma;
                vertices.push(Point3::new(i as f64 * 0.01, j as f64 * 0.01, noise));
            }
        }
        let mut faces = Vec::new();
        let vid = |i: usize, j: usize| i * (n + 1) + j;
        for i in 0..n {
            for j in 0..n {
                faces.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
                faces.push([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
            }
        }
        let mesh = TriangleMesh::new(vertices, faces);
        let rms_before = (mesh.vertices.iter().map(|v| v.z * v.z).sum::<f64>()
            / mesh.vertices.len() as f64)
            .sqrt();
        let smoothed = smooth_feature_aware(
            &mesh,
            &SmoothingParams { theta_th_deg: 30.0, iterations: 10, lambda: 0.5 },
        );
        let rms_after = (smoothed.vertices.iter().map(|v| v.z * v.z).sum::<f64>()
            / smoothed.vertices.len() as f64)
            .sqrt();
        assert!(rms_after < 0.5 * rms_before, "{rms_after} vs {rms_before}");
    }

    #[test]
    fn gated_smoothing_preserves_cube_edges() {
        let mesh = cube_mesh(0.1, 10);
        let gated = smooth_feature_aware(&mesh, &SmoothingParams::default());
        let change = max_dihedral_change(&mesh, &gated);
        assert!(change < 1.0, "dihedral change {change} deg");
    }

    #[test]
    fn ungated_smoothing_shrinks_corners() {
        let mesh = cube_mesh(0.1, 10);
        let gated = smooth_feature_aware(&mesh, &SmoothingParams::default());
        let uniform = smooth_feature_aware(
            &mesh,
            &SmoothingParams { theta_th_deg: 180.0, ..Default::default() },
        );
        let corner_ids: Vec<usize> = mesh
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| {
                [v.x, v.y, v.z]
                    .iter()
                    .all(|&c| c.abs() < 1e-12 || (c - 0.1).abs() < 1e-12)
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(corner_ids.len(), 8);
        let displacement = |m: &TriangleMesh| -> f64 {
            corner_ids
                .iter()
                .map(|&i| (m.vertices[i] - mesh.vertices[i]).norm())
                .sum::<f64>()
                / 8.0
        };
        let d_gated = displacement(&gated);
        let d_uniform = displacement(&uniform);
        assert!(d_uniform > 10.0 * d_gated.max(1e-12), "{d_uniform} vs {d_gated}");
    }

    #[test]
    fn smoothing_step_bound() {
        let mesh = cube_mesh(0.1, 6);
        let ring = one_ring(&mesh);
        let params = SmoothingParams { theta_th_deg: 180.0, iterations: 1, lambda: 0.5 };
        let out = smooth_feature_aware(&mesh, &params);
        for i in 0..mesh.vertices.len() {
            let max_edge = ring[i]
                .iter()
                .map(|&j| (mesh.vertices[j] - mesh.vertices[i]).norm())
                .fold(0.0, f64::max);
            let moved = (out.vertices[i] - mesh.vertices[i]).norm();
            assert!(moved <= params.lambda * max_edge + 1e-12);
        }
    }

    #[test]
    fn canonicalize_centers_and_is_idempotent() {
        let cloud = synth::sample_sphere_shell(0.05, 500, 3).translated(Vector3::new(1.0, 2.0, 3.0));
        let mesh = cube_mesh(0.1, 2).translated(Vector3::new(1.0, 2.0, 3.0));
        let (m1, c1, offset) = canonicalize_asset(&mesh, &cloud).unwrap();
        assert!(c1.centroid().unwrap().coords.norm() < 1e-9);
        assert!((offset - Vector3::new(1.0, 2.0, 3.0)).norm() < 0.01);
        let (_, c2, offset2) = canonicalize_asset(&m1, &c1).unwrap();
        assert!(offset2.norm() < 1e-9);
        assert!(c2.centroid().unwrap().coords.norm() < 1e-9);
    }

    pub(crate) fn max_dihedral_change(a: &TriangleMesh, b: &TriangleMesh) -> f64 {
        // Compare dihedral angles across shared interior edges, worst case.
        let dihedrals = |m: &TriangleMesh| {
            let mut edge_faces: std::collections::HashMap<(usize, usize), Vec<usize>> =
                std::collections::HashMap::new();
            for (fi, f) in m.faces.iter().enumerate() {
                for (x, y) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                    edge_faces.entry((x.min(y), x.max(y))).or_default().push(fi);
                }
            }
            let mut out = std::collections::HashMap::new();
            for (e, fs) in edge_faces {
                if fs.len() == 2 {
                    let n0 = m.face_normal(&m.faces[fs[0]]).normalize();
                    let n1 = m.face_normal(&m.faces[fs[1]]).normalize();
                    out.insert(e, n0.dot(&n1).clamp(-1.0, 1.0).acos().to_degrees());
                }
            }
            out
        };
        let da = dihedrals(a);
        let db = dihedrals(b);
        let mut worst: f64 = 0.0;
        for (e, ang) in &da {
            if let Some(ang2) = db.get(e) {
                worst = worst.max((ang - ang2).abs());
            }
        }
        worst
    }
}

