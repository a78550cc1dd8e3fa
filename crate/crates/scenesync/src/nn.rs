//! Exact nearest-neighbor queries over a point cloud.
//!
//! A median-split kd-tree, read-only after construction. Exactness matters
//! here: ICP correspondence search assumes true closest points, so no
//! approximate pruning is done.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Read-only spatial index over a fixed set of points.
#[derive(Debug, Clone)]
pub struct NnIndex {
    points: Vec<Point3<f64>>,
    // Point indices ordered by the recursive median split; nodes[lo..hi]
    // with the splitting element at the midpoint.
    order: Vec<u32>,
}

#[derive(Debug, Clone, Copy)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

impl NnIndex {
    /// Builds the index. Fails on an empty cloud.
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyInput("cannot index an empty cloud"));
        }
        Self::from_points(cloud.points.clone())
    }

    pub fn from_points(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("cannot index an empty point set"));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build_recursive(&points, &mut order, 0);
        Ok(Self { points, order })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Point3<f64> {
        self.points[index]
    }

    /// Exact nearest neighbor to `query`.
    pub fn nearest(&self, query: &Point3<f64>) -> Neighbor {
        let mut best = Neighbor {
            index: self.order[self.order.len() / 2] as usize,
            distance: f64::INFINITY,
        };
        self.nearest_recursive(query, 0, self.order.len(), 0, &mut best);
        best
    }

    /// The `k` nearest neighbors, closest first.
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        // Max-heap keyed on distance so the current worst is cheap to evict.
        let mut heap: Vec<Neighbor> = Vec::with_capacity(k + 1);
        self.knn_recursive(query, 0, self.order.len(), 0, k, &mut heap);
        heap.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        heap
    }

    /// All points within `radius` of `query`, sorted by distance.
    pub fn radius(&self, query: &Point3<f64>, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.radius_recursive(query, 0, self.order.len(), 0, radius, &mut out);
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        out
    }

    fn nearest_recursive(
        &self,
        query: &Point3<f64>,
        lo: usize,
        hi: usize,
        axis: usize,
        best: &mut Neighbor,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = self.points[idx];
        let d = (p - query).norm();
        if d < best.distance || (d == best.distance && idx < best.index) {
            *best = Neighbor { index: idx, distance: d };
        }
        let delta = query[axis] - p[axis];
        let next_axis = (axis + 1) % 3;
        let (first, second) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_recursive(query, first.0, first.1, next_axis, best);
        if delta.abs() <= best.distance {
            self.nearest_recursive(query, second.0, second.1, next_axis, best);
        }
    }

    fn knn_recursive(
        &self,
        query: &Point3<f64>,
        lo: usize,
        hi: usize,
        axis: usize,
        k: usize,
        heap: &mut Vec<Neighbor>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = self.points[idx];
        let d = (p - query).norm();
        if heap.len() < k {
            heap.push(Neighbor { index: idx, distance: d });
            if heap.len() == k {
                heap.sort_by(|a, b| b.distance.total_cmp(&a.distance));
            }
        } else if d < heap[0].distance {
            heap[0] = Neighbor { index: idx, distance: d };
            let mut i = 0;
            // Restore descending order by insertion; k is small in practice.
            while i + 1 < heap.len() && heap[i].distance < heap[i + 1].distance {
                heap.swap(i, i + 1);
                i += 1;
            }
        }
        let delta = query[axis] - p[axis];
        let next_axis = (axis + 1) % 3;
        let (first, second) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_recursive(query, first.0, first.1, next_axis, k, heap);
        let worst = if heap.len() < k { f64::INFINITY } else { heap[0].distance };
        if delta.abs() <= worst {
            self.knn_recursive(query, second.0, second.1, next_axis, k, heap);
        }
    }

    fn radius_recursive(
        &self,
        query: &Point3<f64>,
        lo: usize,
        hi: usize,
        axis: usize,
        radius: f64,
        out: &mut Vec<Neighbor>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = self.points[idx];
        let d = (p - query).norm();
        if d <= radius {
            out.push(Neighbor { index: idx, distance: d });
        }
        let delta = query[axis] - p[axis];
        let next_axis = (axis + 1) % 3;
        if delta < 0.0 || delta.abs() <= radius {
            self.radius_recursive(query, lo, mid, next_axis, radius, out);
        }
        if delta >= 0.0 || delta.abs() <= radius {
            self.radius_recursive(query, mid + 1, hi, next_axis, radius, out);
        }
    }
}

fn build_recursive(points: &[Point3<f64>], order: &mut [u32], axis: usize) {
    if order.len() <= 1 {
        return;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let next_axis = (axis + 1) % 3;
    let (left, right) = order.split_at_mut(mid);
    build_recursive(points, left, next_axis);
    build_recursive(points, &mut right[1..], next_axis);
}
