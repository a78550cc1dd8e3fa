//! Quadric-error edge-collapse decimation with a feature-edge penalty.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector4};
use ordered_float_total::TotalF64;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Total-ordered f64 wrapper for the collapse heap.
mod ordered_float_total {
    #[derive(PartialEq, PartialOrd)]
    pub struct TotalF64(pub f64);
    impl Eq for TotalF64 {}
    #[allow(clippy::derive_ord_xor_partial_ord)]
    impl Ord for TotalF64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }
}

/// Penalty factor applied to collapses that cross a feature edge, so they
/// are deferred until nothing else remains.
const FEATURE_PENALTY: f64 = 1e9;
/// Extra weight on boundary-preservation quadrics (open rims).
const BOUNDARY_WEIGHT: f64 = 100.0;

/// Collapses edges in order of quadric error until the vertex count drops
/// to `fraction` of the input. Collapses across feature edges (endpoint
/// normals differing by more than `theta_th_deg`) are penalized last.
pub fn decimate(mesh: &TriangleMesh, fraction: f64, theta_th_deg: f64) -> Result<TriangleMesh> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target_vertex_fraction must be in (0,1], got {fraction}"
        )));
    }
    let n = mesh.vertices.len();
    let target = ((fraction * n as f64).ceil() as usize).max(4);
    if n < 4 {
        return Err(Error::InvalidParameter(
            "mesh has fewer than 4 vertices".into(),
        ));
    }
    if fraction >= 1.0 || target >= n {
        return Ok(mesh.clone());
    }
    let cos_th = theta_th_deg.to_radians().cos();

    let mut positions: Vec<Point3<f64>> = mesh.vertices.clone();
    let normals: Vec<Vector3<f64>> = mesh.vertex_normals.clone();
    let mut faces: Vec<Option<[usize; 3]>> = mesh.faces.iter().copied().map(Some).collect();
    let mut vertex_faces: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &v in f {
            vertex_faces[v].insert(fi);
        }
    }

    // Plane quadrics per vertex, plus boundary-edge quadrics so open rims
    // resist drifting inward.
    let mut quadrics: Vec<Matrix4<f64>> = vec![Matrix4::zeros(); n];
    let mut edge_face_count: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    for f in &mesh.faces {
        let fnormal = mesh.face_normal(f);
        let area = fnormal.norm() * 0.5;
        if area > 1e-18 {
            let unit = fnormal.normalize();
            let d = -unit.dot(&mesh.vertices[f[0]].coords);
            let plane = Vector4::new(unit.x, unit.y, unit.z, d);
            let k = plane * plane.transpose() * area;
            for &v in f {
                quadrics[v] += k;
            }
        }
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *edge_face_count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            if edge_face_count[&(a.min(b), a.max(b))] != 1 {
                continue;
            }
            // Constraint plane containing the boundary edge, perpendicular
            // to the adjacent face.
            let fnormal = mesh.face_normal(f);
            let edge = mesh.vertices[b] - mesh.vertices[a];
            let cn = edge.cross(&fnormal);
            if cn.norm() < 1e-18 {
                continue;
            }
            let unit = cn.normalize();
            let d = -unit.dot(&mesh.vertices[a].coords);
            let plane = Vector4::new(unit.x, unit.y, unit.z, d);
            let k = plane * plane.transpose() * (BOUNDARY_WEIGHT * edge.norm());
            quadrics[a] += k;
            quadrics[b] += k;
        }
    }

    let mut version = vec![0u32; n];
    let mut alive = vec![true; n];
    let mut live_count = n;

    let cost_of = |q: &Matrix4<f64>, p: &Point3<f64>| -> f64 {
        let v = Vector4::new(p.x, p.y, p.z, 1.0);
        (v.transpose() * q * v)[(0, 0)]
    };

    let evaluate = |qa: &Matrix4<f64>,
                    qb: &Matrix4<f64>,
                    pa: &Point3<f64>,
                    pb: &Point3<f64>|
     -> (Point3<f64>, f64) {
        let q = qa + qb;
        let a3 = q.fixed_view::<3, 3>(0, 0).into_owned();
        let b3 = -q.fixed_view::<3, 1>(0, 3).into_owned();
        let optimal: Option<Point3<f64>> = Matrix3::from(a3)
            .try_inverse()
            .map(|inv| Point3::from(inv * b3))
            .filter(|p| p.coords.iter().all(|x| x.is_finite()));
        let mid = nalgebra::center(pa, pb);
        let mut best = (mid, cost_of(&q, &mid));
        for cand in [Some(*pa), Some(*pb), optimal].into_iter().flatten() {
            let c = cost_of(&q, &cand);
            if c < best.1 {
                best = (cand, c);
            }
        }
        best
    };

    #[derive(PartialEq, Eq)]
    struct Candidate {
        cost: TotalF64,
        a: usize,
        b: usize,
        va: u32,
        vb: u32,
    }
    impl PartialOrd for Candidate {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Candidate {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.cost
                .cmp(&other.cost)
                .then(self.a.cmp(&other.a))
                .then(self.b.cmp(&other.b))
        }
    }

    let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
    let push_edge = |heap: &mut BinaryHeap<Reverse<Candidate>>,
                         a: usize,
                         b: usize,
                         quadrics: &[Matrix4<f64>],
                         positions: &[Point3<f64>],
                         version: &[u32]| {
        let (a, b) = (a.min(b), a.max(b));
        let (_, mut cost) = evaluate(&quadrics[a], &quadrics[b], &positions[a], &positions[b]);
        // Feature gate from the original normals; collapsing across a sharp
        // edge merges surfaces that meet at a crease.
        let dot = normals[a].dot(&normals[b]).clamp(-1.0, 1.0);
        if dot < cos_th {
            cost = cost.abs() * FEATURE_PENALTY + FEATURE_PENALTY * 1e-18;
        }
        heap.push(Reverse(Candidate {
            cost: TotalF64(cost.max(0.0)),
            a,
            b,
            va: version[a],
            vb: version[b],
        }));
    };

    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    for &(a, b) in &edges {
        push_edge(&mut heap, a, b, &quadrics, &positions, &version);
    }

    while live_count > target {
        let Some(Reverse(cand)) = heap.pop() else {
            break;
        };
        let (a, b) = (cand.a, cand.b);
        if !alive[a] || !alive[b] || version[a] != cand.va || version[b] != cand.vb {
            continue;
        }
        // The pair must still share an edge.
        if !vertex_faces[a].iter().any(|fi| {
            faces[*fi].map_or(false, |f| f.contains(&a) && f.contains(&b))
        }) {
            continue;
        }
        let (new_pos, _) = evaluate(&quadrics[a], &quadrics[b], &positions[a], &positions[b]);

        // Reject collapses that flip any surviving face.
        let flips = vertex_faces[a]
            .iter()
            .chain(vertex_faces[b].iter())
            .any(|&fi| {
                let Some(f) = faces[fi] else { return false };
                if f.contains(&a) && f.contains(&b) {
                    return false; // face disappears
                }
                let mapped = |v: usize| if v == a || v == b { new_pos } else { positions[v] };
                let n_old = (positions[f[1]] - positions[f[0]])
                    .cross(&(positions[f[2]] - positions[f[0]]));
                let n_new =
                    (mapped(f[1]) - mapped(f[0])).cross(&(mapped(f[2]) - mapped(f[0])));
                n_old.dot(&n_new) <= 0.0
            });
        if flips {
            continue;
        }

        // Merge b into a.
        positions[a] = new_pos;
        let qb = quadrics[b];
        quadrics[a] += qb;
        alive[b] = false;
        live_count -= 1;
        version[a] += 1;
        version[b] += 1;

        let b_faces: Vec<usize> = vertex_faces[b].iter().copied().collect();
        for fi in b_faces {
            let Some(mut f) = faces[fi] else { continue };
            if f.contains(&a) {
                // Shared face collapses.
                faces[fi] = None;
                for &v in &f {
                    vertex_faces[v].remove(&fi);
                }
                continue;
            }
            for v in &mut f {
                if *v == b {
                    *v = a;
                }
            }
            faces[fi] = Some(f);
            vertex_faces[a].insert(fi);
            vertex_faces[b].remove(&fi);
        }

        // Refresh candidate edges around the merged vertex.
        let mut ring: HashSet<usize> = HashSet::new();
        for &fi in &vertex_faces[a] {
            if let Some(f) = faces[fi] {
                for &v in &f {
                    if v != a && alive[v] {
                        ring.insert(v);
                    }
                }
            }
        }
        for v in ring {
            push_edge(&mut heap, a, v, &quadrics, &positions, &version);
        }
    }

    let mut out = TriangleMesh {
        vertices: positions,
        faces: faces.into_iter().flatten().collect(),
        vertex_normals: Vec::new(),
    };
    out.remove_degenerate_faces(0.0);
    out.compact();
    Ok(out)
}
