//! Incremental 3D convex hull.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::mesh::TriangleMesh;

/// Exact convex hull of a cloud; all input points end up inside or on the
/// hull within 1e-9 of the supporting planes.
pub fn convex_hull(cloud: &PointCloud) -> Result<TriangleMesh> {
    let points = &cloud.points;
    if points.len() < 4 {
        return Err(Error::DegenerateInput(format!(
            "convex hull needs at least 4 points, got {}",
            points.len()
        )));
    }
    let scale = crate::geom::Aabb::from_points(points)
        .map(|b| b.diagonal())
        .unwrap_or(1.0)
        .max(1e-12);
    let eps = 1e-12 * scale + 1e-12;

    let (a, b, c, d) = initial_tetrahedron(points, eps)?;

    // Faces stored with outward orientation; `alive` marks current hull faces.
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut alive: Vec<bool> = Vec::new();
    let centroid = (points[a].coords + points[b].coords + points[c].coords + points[d].coords)
        / 4.0;
    let push_face = |faces: &mut Vec<[usize; 3]>, alive: &mut Vec<bool>, f: [usize; 3]| {
        let n = normal(points, &f);
        let to_centroid = centroid - points[f[0]].coords;
        let f = if n.dot(&to_centroid) > 0.0 { [f[0], f[2], f[1]] } else { f };
        faces.push(f);
        alive.push(true);
    };
    for f in [[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
        push_face(&mut faces, &mut alive, f);
    }

    for (pi, p) in points.iter().enumerate() {
        if pi == a || pi == b || pi == c || pi == d {
            continue;
        }
        // Faces that see the point.
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&fi| {
                alive[fi] && {
                    let f = &faces[fi];
                    normal(points, f).dot(&(p - points[f[0]])) > eps
                }
            })
            .collect();
        if visible.is_empty() {
            continue;
        }
        // Horizon: edges of visible faces shared with a non-visible face.
        let mut edge_count: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        for &fi in &visible {
            let f = faces[fi];
            for (x, y) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *edge_count.entry((x.min(y), x.max(y))).or_default() += 1;
            }
        }
        for &fi in &visible {
            alive[fi] = false;
        }
        for &fi in &visible {
            let f = faces[fi];
            for (x, y) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (x.min(y), x.max(y));
                if edge_count[&key] == 1 {
                    // Keep the winding of the dead face so the new face
                    // faces outward.
                    faces.push([x, y, pi]);
                    alive.push(true);
                }
            }
        }
    }

    let final_faces: Vec<[usize; 3]> = faces
        .into_iter()
        .zip(alive)
        .filter(|(_, a)| *a)
        .map(|(f, _)| f)
        .collect();
    let mut mesh = TriangleMesh {
        vertices: points.clone(),
        faces: final_faces,
        vertex_normals: Vec::new(),
    };
    mesh.compact();
    Ok(mesh)
}

fn normal(points: &[Point3<f64>], f: &[usize; 3]) -> Vector3<f64> {
    (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]))
}

fn initial_tetrahedron(
    points: &[Point3<f64>],
    eps: f64,
) -> Result<(usize, usize, usize, usize)> {
    // Extremes along x for the first edge.
    let a = (0..points.len())
        .min_by(|&i, &j| points[i].x.total_cmp(&points[j].x))
        .unwrap();
    let b = (0..points.len())
        .max_by(|&i, &j| {
            (points[i] - points[a])
                .norm()
                .total_cmp(&(points[j] - points[a]).norm())
        })
        .unwrap();
    if (points[b] - points[a]).norm() < eps {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }
    let ab = points[b] - points[a];
    let c = (0..points.len())
        .max_by(|&i, &j| {
            ab.cross(&(points[i] - points[a]))
                .norm()
                .total_cmp(&ab.cross(&(points[j] - points[a])).norm())
        })
        .unwrap();
    if ab.cross(&(points[c] - points[a])).norm() < eps {
        return Err(Error::DegenerateInput("points are collinear".into()));
    }
    let n = ab.cross(&(points[c] - points[a]));
    let d = (0..points.len())
        .max_by(|&i, &j| {
            n.dot(&(points[i] - points[a]))
                .abs()
                .total_cmp(&n.dot(&(points[j] - points[a])).abs())
        })
        .unwrap();
    if n.dot(&(points[d] - points[a])).abs() < eps {
        return Err(Error::DegenerateInput("points are coplanar".into()));
    }
    Ok((a, b, c, d))
}

/// Signed distance of `p` outside the hull: max over faces of the signed
/// plane distance. Non-positive means inside.
pub fn hull_outside_distance(mesh: &TriangleMesh, p: &Point3<f64>) -> f64 {
    mesh.faces
        .iter()
        .map(|f| {
            let n = (mesh.vertices[f[1]] - mesh.vertices[f[0]])
                .cross(&(mesh.vertices[f[2]] - mesh.vertices[f[0]]));
            let n = n.normalize();
            n.dot(&(p - mesh.vertices[f[0]]))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
