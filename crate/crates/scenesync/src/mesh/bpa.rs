//! Ball-pivoting surface reconstruction.
//!
//! A ball of fixed radius rolls over the cloud, emitting a triangle each
//! time it rests on three points with no other point inside. A ladder of
//! increasing radii (1x, 2x, 4x the mean nearest-neighbor spacing) lets
//! later passes bridge regions the small ball could not reach. Remaining
//! small boundary loops are fan-filled; larger holes (cup openings) are
//! left open.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::mesh::{estimate_normals, TriangleMesh};
use crate::nn::NnIndex;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ReconstructParams {
    /// Ball radii as multiples of the mean nearest-neighbor distance.
    pub radius_factors: Vec<f64>,
    /// Boundary loops with at most this many edges are fan-filled.
    pub fill_hole_max_edges: usize,
    /// Neighbor count for on-demand normal estimation.
    pub normal_k: usize,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        Self {
            radius_factors: vec![1.0, 2.0, 4.0],
            fill_hole_max_edges: 12,
            normal_k: 16,
        }
    }
}

const MIN_POINTS: usize = 100;

/// Seed triangles are only attempted once the ball radius reaches this
/// multiple of the mean point spacing. A smaller ball can rest only on
/// anomalously dense triples, which seeds hundreds of tiny patches whose
/// borders never zip together; such radii are still useful for extending
/// fronts seeded at larger scales.
const SEED_MIN_FACTOR: f64 = 1.5;

type DirectedEdge = (u32, u32);

fn undirected(e: DirectedEdge) -> DirectedEdge {
    (e.0.min(e.1), e.0.max(e.1))
}

struct Front {
    /// Active directed edges mapped to the face that created them.
    active: HashMap<DirectedEdge, [u32; 3]>,
    queue: VecDeque<DirectedEdge>,
    /// Edges whose pivot failed at the current radius; retried at the next.
    frozen: HashMap<DirectedEdge, [u32; 3]>,
    /// Usage count per undirected edge.
    usage: HashMap<DirectedEdge, u8>,
    directed_used: HashSet<DirectedEdge>,
}

impl Front {
    fn new() -> Self {
        Self {
            active: HashMap::new(),
            queue: VecDeque::new(),
            frozen: HashMap::new(),
            usage: HashMap::new(),
            directed_used: HashSet::new(),
        }
    }

    fn can_add_face(&self, face: [u32; 3]) -> bool {
        for e in face_edges(face) {
            if self.directed_used.contains(&e) {
                return false;
            }
            if self.usage.get(&undirected(e)).copied().unwrap_or(0) >= 2 {
                return false;
            }
        }
        true
    }

    fn add_face(&mut self, face: [u32; 3]) {
        for e in face_edges(face) {
            self.directed_used.insert(e);
            *self.usage.entry(undirected(e)).or_default() += 1;
            let reverse = (e.1, e.0);
            if self.active.remove(&reverse).is_some() || self.frozen.remove(&reverse).is_some() {
                // Edge now has faces on both sides.
            } else {
                self.active.insert(e, face);
                self.queue.push_back(e);
            }
        }
    }

    fn thaw(&mut self) {
        for (e, face) in std::mem::take(&mut self.frozen) {
            self.active.insert(e, face);
            self.queue.push_back(e);
        }
    }
}

fn face_edges(face: [u32; 3]) -> [DirectedEdge; 3] {
    [
        (face[0], face[1]),
        (face[1], face[2]),
        (face[2], face[0]),
    ]
}

/// Reconstructs a triangle mesh from a (dense) point cloud.
///
/// Normals are estimated on demand when the cloud carries none.
pub fn reconstruct_mesh(cloud: &PointCloud, params: &ReconstructParams) -> Result<TriangleMesh> {
    if cloud.len() < MIN_POINTS {
        return Err(Error::TooSparse {
            got: cloud.len(),
            min: MIN_POINTS,
        });
    }
    let cloud = if cloud.normals.is_some() {
        cloud.clone()
    } else {
        estimate_normals(cloud, params.normal_k)?
    };
    let normals = cloud.normals.as_ref().unwrap();
    let points = &cloud.points;
    let index = NnIndex::build(&cloud)?;

    let mean_nn: f64 = points
        .iter()
        .map(|p| index.knn(p, 2).last().map(|n| n.distance).unwrap_or(0.0))
        .sum::<f64>()
        / points.len() as f64;
    if mean_nn <= 0.0 {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }

    let mut front = Front::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut used = vec![false; points.len()];

    for &factor in &params.radius_factors {
        let radius = factor * mean_nn;
        front.thaw();
        loop {
            // Drain the pivot front.
            while let Some(edge) = front.queue.pop_front() {
                let Some(&face) = front.active.get(&edge) else {
                    continue;
                };
                // The rolling ball stops at the first point it touches; if
                // the resulting face cannot be added (edge already doubly
                // used or winding conflict) the edge stays boundary rather
                // than gluing to a farther point.
                match pivot(points, normals, &index, radius, edge, face) {
                    Some(p) => {
                        let new_face = [edge.1, edge.0, p];
                        if front.can_add_face(new_face) {
                            front.add_face(new_face);
                            faces.push(new_face);
                            used[p as usize] = true;
                        } else {
                            front.active.remove(&edge);
                            front.frozen.insert(edge, face);
                        }
                    }
                    None => {
                        front.active.remove(&edge);
                        front.frozen.insert(edge, face);
                    }
                }
            }
            // Front exhausted; try to seed a new component.
            if radius < SEED_MIN_FACTOR * mean_nn {
                break;
            }
            match find_seed(points, normals, &index, radius, &used, &front) {
                Some((face, _)) => {
                    front.add_face(face);
                    faces.push(face);
                    for &v in &face {
                        used[v as usize] = true;
                    }
                }
                None => break,
            }
        }
    }

    let mut mesh = TriangleMesh::new(
        points.clone(),
        faces.iter().map(|f| [f[0] as usize, f[1] as usize, f[2] as usize]).collect(),
    );
    fill_small_holes(&mut mesh, params.fill_hole_max_edges);
    mesh.remove_degenerate_faces(1e-16 * mean_nn * mean_nn);
    mesh.compact();
    Ok(mesh)
}

/// Center of a ball of `radius` resting on the triangle, on the side its
/// normal points to. None if the circumradius exceeds the ball radius.
fn ball_center(
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
    orient: &Vector3<f64>,
    radius: f64,
) -> Option<Point3<f64>> {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let n2 = n.norm_squared();
    if n2 < 1e-24 {
        return None;
    }
    // Circumcenter via perpendicular offsets.
    let to_center =
        (ac.norm_squared() * n.cross(&ab) + ab.norm_squared() * ac.cross(&n)) / (2.0 * n2);
    let circumradius2 = to_center.norm_squared();
    let h2 = radius * radius - circumradius2;
    if h2 <= 0.0 {
        return None;
    }
    let dir = if n.dot(orient) >= 0.0 { n } else { -n };
    Some(a + to_center + dir.normalize() * h2.sqrt())
}

fn ball_is_empty(
    points: &[Point3<f64>],
    index: &NnIndex,
    center: &Point3<f64>,
    radius: f64,
    exclude: [u32; 3],
) -> bool {
    let tol = radius * 1e-7;
    index
        .radius(center, radius - tol)
        .iter()
        .all(|n| exclude.contains(&(n.index as u32)) || {
            (points[n.index] - center).norm() >= radius - tol
        })
}

fn find_seed(
    points: &[Point3<f64>],
    normals: &[Vector3<f64>],
    index: &NnIndex,
    radius: f64,
    used: &[bool],
    front: &Front,
) -> Option<([u32; 3], Point3<f64>)> {
    for (i, p) in points.iter().enumerate() {
        if used[i] {
            continue;
        }
        let nbrs = index.radius(p, 2.0 * radius);
        for a in 0..nbrs.len() {
            let ia = nbrs[a].index;
            if ia == i {
                continue;
            }
            for b in (a + 1)..nbrs.len() {
                let ib = nbrs[b].index;
                if ib == i {
                    continue;
                }
                let orient = normals[i] + normals[ia] + normals[ib];
                let Some(center) =
                    ball_center(p, &points[ia], &points[ib], &orient, radius)
                else {
                    continue;
                };
                let tri = [i as u32, ia as u32, ib as u32];
                if !ball_is_empty(points, index, &center, radius, tri) {
                    continue;
                }
                // Wind the face so its normal agrees with the vertex normals.
                let n_tri = (points[ia] - p).cross(&(points[ib] - p));
                let face = if n_tri.dot(&orient) >= 0.0 {
                    tri
                } else {
                    [tri[0], tri[2], tri[1]]
                };
                if front.can_add_face(face) {
                    return Some((face, center));
                }
            }
        }
    }
    None
}

fn pivot(
    points: &[Point3<f64>],
    normals: &[Vector3<f64>],
    index: &NnIndex,
    radius: f64,
    edge: DirectedEdge,
    face: [u32; 3],
) -> Option<u32> {
    let x = points[edge.0 as usize];
    let y = points[edge.1 as usize];
    let mid = nalgebra::center(&x, &y);
    let edge_axis = (y - x).normalize();

    // Reference ball center for the face that owns this edge.
    let orient = normals[face[0] as usize]
        + normals[face[1] as usize]
        + normals[face[2] as usize];
    let old_center = ball_center(
        &points[face[0] as usize],
        &points[face[1] as usize],
        &points[face[2] as usize],
        &orient,
        radius,
    )?;
    let ref_dir = {
        let d = old_center - mid;
        (d - edge_axis * d.dot(&edge_axis)).normalize()
    };
    let ref_ortho = edge_axis.cross(&ref_dir);

    let candidates = index.radius(&mid, 2.0 * radius);
    let mut best: Option<(u32, f64)> = None;
    for cand in &candidates {
        let pi = cand.index as u32;
        if pi == edge.0 || pi == edge.1 {
            continue;
        }
        let p = points[cand.index];
        // Both ball positions touching (x, y, p); pick each and measure the
        // pivot rotation from the reference center, smallest positive wins.
        let n_tri = (x - y).cross(&(p - y));
        for sign in [1.0, -1.0] {
            let Some(center) = ball_center(&y, &x, &p, &(n_tri * sign), radius) else {
                continue;
            };
            let d = center - mid;
            let planar = d - edge_axis * d.dot(&edge_axis);
            if planar.norm() < 1e-14 {
                continue;
            }
            let cosv = planar.normalize().dot(&ref_dir).clamp(-1.0, 1.0);
            let sinv = planar.normalize().dot(&ref_ortho);
            let mut angle = sinv.atan2(cosv);
            // Rotation away from the existing face; angle 0 means the same
            // side, 2*pi a full revolution.
            if angle <= 1e-9 {
                angle += 2.0 * std::f64::consts::PI;
            }
            if !ball_is_empty(points, index, &center, radius, [edge.0, edge.1, pi]) {
                continue;
            }
            match best {
                Some((_, best_angle)) if best_angle <= angle => {}
                _ => best = Some((pi, angle)),
            }
        }
    }
    best.map(|(pi, _)| pi)
}

/// Fan-fills boundary loops with at most `max_edges` edges.
fn fill_small_holes(mesh: &mut TriangleMesh, max_edges: usize) {
    if max_edges < 3 {
        return;
    }
    // Directed boundary edges: those whose reverse has no face.
    let mut directed: HashSet<(usize, usize)> = HashSet::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            directed.insert((a, b));
        }
    }
    let boundary: Vec<(usize, usize)> = directed
        .iter()
        .filter(|&&(a, b)| !directed.contains(&(b, a)))
        .copied()
        .collect();
    let mut next: HashMap<usize, usize> = HashMap::new();
    for &(a, b) in &boundary {
        // A hole is traversed opposite to the face winding.
        next.insert(b, a);
    }
    let mut visited: HashSet<usize> = HashSet::new();
    let starts: Vec<usize> = {
        let mut s: Vec<usize> = next.keys().copied().collect();
        s.sort_unstable();
        s
    };
    for start in starts {
        if visited.contains(&start) {
            continue;
        }
        let mut loop_vs = vec![start];
        visited.insert(start);
        let mut cur = start;
        let mut closed = false;
        while let Some(&n) = next.get(&cur) {
            if n == start {
                closed = true;
                break;
            }
            if visited.contains(&n) || loop_vs.len() > max_edges {
                break;
            }
            visited.insert(n);
            loop_vs.push(n);
            cur = n;
        }
        if !closed || loop_vs.len() < 3 || loop_vs.len() > max_edges {
            continue;
        }
        let centroid: Vector3<f64> = loop_vs
            .iter()
            .map(|&v| mesh.vertices[v].coords)
            .sum::<Vector3<f64>>()
            / loop_vs.len() as f64;
        let c_idx = mesh.vertices.len();
        mesh.vertices.push(Point3::from(centroid));
        for w in 0..loop_vs.len() {
            let a = loop_vs[w];
            let b = loop_vs[(w + 1) % loop_vs.len()];
            mesh.faces.push([a, b, c_idx]);
        }
    }
    mesh.recompute_normals();
}
