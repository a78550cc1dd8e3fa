//! Fundamental geometric types: point clouds, rigid transforms, quaternions.
//!
//! All coordinates are metric (meters) after scale calibration; before
//! calibration they are in reconstruction units. Every type here is an
//! immutable value after construction and safe to share across threads.

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RGB color with unit-interval channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbColor {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl RgbColor {
    pub fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    /// Luminance intensity used by the color residual of colored ICP.
    pub fn intensity(&self) -> f64 {
        0.299 * self.r + 0.587 * self.g + 0.114 * self.b
    }

    pub fn clamped(&self) -> Self {
        Self {
            r: self.r.clamp(0.0, 1.0),
            g: self.g.clamp(0.0, 1.0),
            b: self.b.clamp(0.0, 1.0),
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn from_points<'a, I: IntoIterator<Item = &'a Point3<f64>>>(points: I) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut min = first;
        let mut max = first;
        for p in iter {
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        Some(Self { min, max })
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Point cloud with optional per-point colors, normals, and ground-truth labels.
///
/// The labels channel exists purely for synthetic-scene evaluation; no
/// algorithmic code path reads it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub colors: Option<Vec<RgbColor>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub labels: Option<Vec<i64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks channel-length agreement and normal unit norm.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::InvariantViolation(format!(
                    "colors length {} != points length {}",
                    c.len(),
                    n
                )));
            }
        }
        if let Some(nm) = &self.normals {
            if nm.len() != n {
                return Err(Error::InvariantViolation(format!(
                    "normals length {} != points length {}",
                    nm.len(),
                    n
                )));
            }
            for (i, v) in nm.iter().enumerate() {
                if (v.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvariantViolation(format!(
                        "normal {} has norm {}",
                        i,
                        v.norm()
                    )));
                }
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::InvariantViolation(format!(
                    "labels length {} != points length {}",
                    l.len(),
                    n
                )));
            }
        }
        Ok(())
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }

    /// Coordinate-wise mean of all points.
    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().map(|p| p.coords).sum();
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Builds a new cloud from the given point indices, keeping all channels.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self
                .normals
                .as_ref()
                .map(|nm| indices.iter().map(|&i| nm[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Concatenates two clouds. A channel survives only if present in both.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        fn join<T: Clone>(a: &Option<Vec<T>>, b: &Option<Vec<T>>) -> Option<Vec<T>> {
            match (a, b) {
                (Some(a), Some(b)) => {
                    let mut v = a.clone();
                    v.extend_from_slice(b);
                    Some(v)
                }
                _ => None,
            }
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        PointCloud {
            points,
            colors: join(&self.colors, &other.colors),
            normals: join(&self.normals, &other.normals),
            labels: join(&self.labels, &other.labels),
        }
    }

    /// Uniformly scales all coordinates; colors and normals are untouched.
    pub fn scaled(&self, factor: f64) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| Point3::from(p.coords * factor)).collect(),
            colors: self.colors.clone(),
            normals: self.normals.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Translates all points by `offset`.
    pub fn translated(&self, offset: Vector3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p + offset).collect(),
            colors: self.colors.clone(),
            normals: self.normals.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// SE(3) rigid transform.
///
/// Internally an orthonormal rotation plus translation; convertible to and
/// from a 4x4 row-major homogeneous matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation about `axis` by `angle` radians, no translation.
    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64) -> Self {
        Self::from_parts(Rotation3::from_axis_angle(axis, angle), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts(Rotation3::identity(), t)
    }

    /// Validates and ingests a 4x4 homogeneous matrix.
    ///
    /// The rotation block must be orthonormal with determinant 1 within
    /// `tol`, and the last row must be (0,0,0,1).
    pub fn from_matrix(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        let last = m.row(3);
        if (last[0]).abs() > tol || (last[1]).abs() > tol || (last[2]).abs() > tol
            || (last[3] - 1.0).abs() > tol
        {
            return Err(Error::ValidationError(
                "last row of homogeneous matrix is not (0,0,0,1)".into(),
            ));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho_err = (r * r.transpose() - Matrix3::identity()).norm();
        if ortho_err > tol {
            return Err(Error::ValidationError(format!(
                "rotation block not orthonormal (error {ortho_err:.3e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > tol {
            return Err(Error::ValidationError(format!(
                "rotation determinant {} != 1",
                r.determinant()
            )));
        }
        // Re-orthonormalize so downstream algebra stays exactly rigid. Going
        // through a quaternion is well conditioned for all angles, unlike the
        // iterative matrix refinement, which converges poorly near pi.
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r))
            .to_rotation_matrix();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = self.rotation.inverse();
        RigidTransform {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Applies the transform to a cloud; normals are rotated only.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.transform_point(p)).collect(),
            colors: cloud.colors.clone(),
            normals: cloud
                .normals
                .as_ref()
                .map(|nm| nm.iter().map(|n| self.rotation * n).collect()),
            labels: cloud.labels.clone(),
        }
    }

    /// Geodesic rotation distance to another transform, in radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.inverse() * other.rotation;
        // Clamp before acos: rounding can push the trace of a near-identity
        // relative rotation just past 3, which would yield NaN.
        ((rel.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Unit quaternion with explicit (w, x, y, z) component ordering.
///
/// Serialization order is w first. Some simulators store (x, y, z, w);
/// this type exists so the convention is fixed at the type level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuatWxyz {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl QuatWxyz {
    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Rotation matrix for this quaternion as a translation-free transform.
    pub fn to_transform(&self) -> Result<RigidTransform> {
        if (self.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "quaternion norm {} is not 1",
                self.norm()
            )));
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            self.w, self.x, self.y, self.z,
        ));
        Ok(RigidTransform::from_parts(q.to_rotation_matrix(), Vector3::zeros()))
    }

    /// Extracts the rotation of `t` as a (w, x, y, z) quaternion, w >= 0.
    pub fn from_transform(t: &RigidTransform) -> QuatWxyz {
        let q = UnitQuaternion::from_rotation_matrix(t.rotation());
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        QuatWxyz {
            w: q.w,
            x: q.i,
            y: q.j,
            z: q.k,
        }
    }
}
