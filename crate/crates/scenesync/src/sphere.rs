//! Fibonacci-sphere direction sampling, spherical adjacency, and
//! point-to-direction bucket assignment.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::nn::NnIndex;

/// Points closer than this to the expansion center are skipped: their
/// direction is numerically meaningless.
pub const CENTER_EPS: f64 = 1e-9;

/// A fixed set of near-uniform unit directions with a neighbor graph.
#[derive(Debug, Clone)]
pub struct DirectionGrid {
    pub directions: Vec<Vector3<f64>>,
    pub adjacency: Vec<Vec<usize>>,
    pub theta_tolerance: f64,
}

impl DirectionGrid {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Mean angular spacing for `k` near-uniform directions on the sphere.
    pub fn theta_mean(k: usize) -> f64 {
        (4.0 * std::f64::consts::PI / k as f64).sqrt()
    }
}

/// Per-direction point buckets with the distance of each bucket's closest
/// point to the center.
#[derive(Debug, Clone)]
pub struct BucketAssignment {
    pub buckets: Vec<Vec<usize>>,
    pub r_min: Vec<Option<f64>>,
}

impl BucketAssignment {
    pub fn non_empty(&self, j: usize) -> bool {
        !self.buckets[j].is_empty()
    }
}

/// Samples `k` near-uniform unit directions along the Fibonacci spiral and
/// builds a mutual-angle adjacency graph over them.
///
/// θ_i = arccos(1 − 2i/k), φ_i = π(1+√5)·i; directions j,l are adjacent iff
/// angle(d_j, d_l) ≤ 2.2·θ_mean.
pub fn fibonacci_directions(k: usize) -> Result<DirectionGrid> {
    if k < 8 {
        return Err(Error::InvalidParameter(format!(
            "direction count must be at least 8, got {k}"
        )));
    }
    let golden = std::f64::consts::PI * (1.0 + 5.0_f64.sqrt());
    let directions: Vec<Vector3<f64>> = (0..k)
        .map(|i| {
            let cos_theta = (1.0 - 2.0 * i as f64 / k as f64).clamp(-1.0, 1.0);
            let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta)
        })
        .collect();

    let theta_mean = DirectionGrid::theta_mean(k);
    let cos_adj = (2.2 * theta_mean).cos();
    // Neighbor candidates via the kd-tree: chord length matching the
    // adjacency angle, padded slightly for rounding.
    let dir_points: Vec<Point3<f64>> = directions.iter().map(|d| Point3::from(*d)).collect();
    let index = NnIndex::from_points(dir_points.clone())?;
    let chord = 2.0 * (1.1 * theta_mean).sin() + 1e-9;
    let mut adjacency = vec![Vec::new(); k];
    for (j, d) in directions.iter().enumerate() {
        let mut near: Vec<usize> = index
            .radius(&dir_points[j], chord)
            .into_iter()
            .map(|n| n.index)
            .collect();
        near.sort_unstable();
        for cand in near {
            if cand != j && d.dot(&directions[cand]) >= cos_adj {
                adjacency[j].push(cand);
            }
        }
    }
    Ok(DirectionGrid {
        directions,
        adjacency,
        theta_tolerance: 1.5 * theta_mean,
    })
}

/// Coordinate-wise mean of the cloud, the expansion center.
pub fn robust_center(cloud: &PointCloud) -> Result<Point3<f64>> {
    cloud
        .centroid()
        .ok_or(Error::EmptyInput("cannot center an empty cloud"))
}

/// Assigns each point to the bucket of its angularly nearest direction,
/// provided the angle is within the grid's tolerance; records per-bucket
/// minimum distance to `center`.
pub fn assign_buckets(
    cloud: &PointCloud,
    center: &Point3<f64>,
    grid: &DirectionGrid,
) -> Result<BucketAssignment> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("no points to assign"));
    }
    let dir_points: Vec<Point3<f64>> = grid.directions.iter().map(|d| Point3::from(*d)).collect();
    let index = NnIndex::from_points(dir_points.clone())?;
    let cos_tol = grid.theta_tolerance.cos();

    let mut buckets = vec![Vec::new(); grid.len()];
    let mut r_min = vec![None; grid.len()];
    let mut any = false;
    for (i, p) in cloud.points.iter().enumerate() {
        let v = p - center;
        let r = v.norm();
        if r < CENTER_EPS {
            continue;
        }
        any = true;
        let unit = v / r;
        // Nearest direction by Euclidean distance on the unit sphere is the
        // one with the largest dot product.
        let j = index.nearest(&Point3::from(unit)).index;
        if unit.dot(&grid.directions[j]) >= cos_tol {
            buckets[j].push(i);
            let slot = &mut r_min[j];
            *slot = Some(slot.map_or(r, |cur: f64| cur.min(r)));
        }
    }
    if !any {
        return Err(Error::DegenerateInput(
            "all points coincide with the center".into(),
        ));
    }
    Ok(BucketAssignment { buckets, r_min })
}
