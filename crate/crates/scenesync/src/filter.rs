//! Point-cloud filters: voxel downsampling and statistical outlier removal.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, RgbColor};
use crate::nn::NnIndex;

/// Downsamples a cloud to at most one point per occupied voxel.
///
/// The output point is the centroid of the voxel members; colors and
/// normals are averaged (normals re-normalized) and labels decided by
/// majority vote. Voxel keys are floored against the coordinate origin,
/// which makes the operation idempotent: a voxel centroid stays inside
/// its own voxel, so a second pass is a no-op.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "voxel_size must be positive, got {voxel_size}"
        )));
    }
    let key_of = |p: &Point3<f64>| -> (i64, i64, i64) {
        (
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        )
    };
    let mut voxels: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        voxels.entry(key_of(p)).or_default().push(i);
    }
    let mut keys: Vec<(i64, i64, i64)> = voxels.keys().copied().collect();
    keys.sort_unstable();

    let mut out = PointCloud {
        points: Vec::with_capacity(keys.len()),
        colors: cloud.colors.as_ref().map(|_| Vec::with_capacity(keys.len())),
        normals: cloud.normals.as_ref().map(|_| Vec::with_capacity(keys.len())),
        labels: cloud.labels.as_ref().map(|_| Vec::with_capacity(keys.len())),
    };
    for key in keys {
        let members = &voxels[&key];
        if members.len() == 1 {
            // Single member passes through bitwise, keeping the op idempotent.
            let i = members[0];
            out.points.push(cloud.points[i]);
            if let (Some(dst), Some(src)) = (&mut out.colors, &cloud.colors) {
                dst.push(src[i]);
            }
            if let (Some(dst), Some(src)) = (&mut out.normals, &cloud.normals) {
                dst.push(src[i]);
            }
            if let (Some(dst), Some(src)) = (&mut out.labels, &cloud.labels) {
                dst.push(src[i]);
            }
            continue;
        }
        let inv = 1.0 / members.len() as f64;
        let centroid: Vector3<f64> =
            members.iter().map(|&i| cloud.points[i].coords).sum::<Vector3<f64>>() * inv;
        out.points.push(Point3::from(centroid));
        if let (Some(dst), Some(src)) = (&mut out.colors, &cloud.colors) {
            let (r, g, b) = members.iter().fold((0.0, 0.0, 0.0), |acc, &i| {
                (acc.0 + src[i].r, acc.1 + src[i].g, acc.2 + src[i].b)
            });
            dst.push(RgbColor::new(r * inv, g * inv, b * inv));
        }
        if let (Some(dst), Some(src)) = (&mut out.normals, &cloud.normals) {
            let sum: Vector3<f64> = members.iter().map(|&i| src[i]).sum();
            let n = sum.norm();
            dst.push(if n > 1e-12 { sum / n } else { Vector3::z() });
        }
        if let (Some(dst), Some(src)) = (&mut out.labels, &cloud.labels) {
            let mut counts: HashMap<i64, usize> = HashMap::new();
            for &i in members {
                *counts.entry(src[i]).or_default() += 1;
            }
            let winner = counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(label, _)| label)
                .unwrap();
            dst.push(winner);
        }
    }
    Ok(out)
}

/// Removes points whose mean distance to their `k` nearest neighbors
/// exceeds the global mean by more than `std_ratio` standard deviations.
pub fn statistical_outlier_removal(
    cloud: &PointCloud,
    k: usize,
    std_ratio: f64,
) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("outlier removal on empty cloud"));
    }
    if cloud.len() <= k + 1 {
        return Ok(cloud.clone());
    }
    let index = NnIndex::build(cloud)?;
    let mean_dists: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| {
            let nbrs = index.knn(p, k + 1); // includes self at distance 0
            let sum: f64 = nbrs.iter().skip(1).map(|n| n.distance).sum();
            sum / k as f64
        })
        .collect();
    let mean = mean_dists.iter().sum::<f64>() / mean_dists.len() as f64;
    let var = mean_dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>()
        / mean_dists.len() as f64;
    let cutoff = mean + std_ratio * var.sqrt();
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| mean_dists[i] <= cutoff).collect();
    Ok(cloud.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn close_pair_merges_to_midpoint() {
        let cloud = PointCloud::from_points(vec![
            Point3::new(0.0005, 0.001, 0.001),
            Point3::new(0.0015, 0.001, 0.001),
        ]);
        let out = voxel_downsample(&cloud, 0.003).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Point3::new(0.001, 0.001, 0.001)).norm() < 1e-12);
    }

    #[test]
    fn far_pair_stays_separate() {
        let cloud = PointCloud::from_points(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.010, 0.0, 0.0),
        ]);
        let out = voxel_downsample(&cloud, 0.003).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn non_positive_voxel_rejected() {
        let cloud = PointCloud::from_points(vec![Point3::origin()]);
        assert!(voxel_downsample(&cloud, 0.0).is_err());
        assert!(voxel_downsample(&cloud, -1.0).is_err());
    }

    #[test]
    fn output_count_matches_hash_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = PointCloud::from_points(
            (0..100_000)
                .map(|_| {
                    Point3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>())
                })
                .collect(),
        );
        let voxel = 0.1;
        let occupied: HashSet<(i64, i64, i64)> = cloud
            .points
            .iter()
            .map(|p| {
                (
                    (p.x / voxel).floor() as i64,
                    (p.y / voxel).floor() as i64,
                    (p.z / voxel).floor() as i64,
                )
            })
            .collect();
        let out = voxel_downsample(&cloud, voxel).unwrap();
        assert_eq!(out.len(), occupied.len());
    }

    #[test]
    fn idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cloud = PointCloud::from_points(
            (0..5_000)
                .map(|_| {
                    Point3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    )
                })
                .collect(),
        );
        let once = voxel_downsample(&cloud, 0.03).unwrap();
        let twice = voxel_downsample(&once, 0.03).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn labels_majority_vote() {
        let mut cloud = PointCloud::from_points(vec![
            Point3::new(0.001, 0.001, 0.001),
            Point3::new(0.0012, 0.001, 0.001),
            Point3::new(0.0014, 0.001, 0.001),
        ]);
        cloud.labels = Some(vec![1, 2, 2]);
        let out = voxel_downsample(&cloud, 0.003).unwrap();
        assert_eq!(out.labels.unwrap(), vec![2]);
    }

    #[test]
    fn outlier_removal_drops_far_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut points: Vec<Point3<f64>> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                )
            })
            .collect();
        points.push(Point3::new(5.0, 5.0, 5.0));
        let cloud = PointCloud::from_points(points);
        let out = statistical_outlier_removal(&cloud, 16, 2.0).unwrap();
        assert!(out.len() < cloud.len());
        assert!(out.points.iter().all(|p| p.coords.norm() < 1.0));
    }
}
