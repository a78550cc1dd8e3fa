//! Rigid registration of partial observations to canonical models.
//!
//! The joint objective per correspondence (x, y) with target normal n_y is
//!
//!   lambda_g * (n_y . (T x - y))^2  +  lambda_c * (I(x) - I_y(T x))^2
//!
//! where I is color intensity and I_y extrapolates the target's intensity
//! in its tangent plane at y. Minimized coarse-to-fine over a voxel
//! pyramid by Gauss-Newton on the 6-vector (rotation, translation), with
//! step halving so each accepted step never increases the objective over
//! the current correspondence set. Geometric-only registration is the
//! lambda_c = 0 special case.

use nalgebra::{Matrix3, Matrix6, Point3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::voxel_downsample;
use crate::geom::{PointCloud, RigidTransform};
use crate::mesh::estimate_normals;
use crate::nn::NnIndex;

/// How the target intensity at a projected source point is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    /// Raw intensity of the nearest target point.
    Nn,
    /// Intensity extrapolated linearly in the target's tangent plane.
    Tangent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    /// Geometric term weight; normalized against `lambda_c` before use.
    pub lambda_g: f64,
    /// Color term weight.
    pub lambda_c: f64,
    /// Iteration cap per pyramid level.
    pub max_iters: usize,
    /// Coarse-to-fine voxel sizes, strictly decreasing.
    pub pyramid: Vec<f64>,
    /// Correspondence rejection distance.
    pub max_correspondence_dist: f64,
    /// Convergence threshold on the relative objective change.
    pub convergence_eps: f64,
    pub color_mode: ColorMode,
    /// Neighbor count for on-demand target normal estimation.
    pub normal_k: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            lambda_g: 0.968,
            lambda_c: 0.032,
            max_iters: 30,
            pyramid: vec![0.012, 0.006, 0.003],
            max_correspondence_dist: 0.025,
            convergence_eps: 1e-6,
            color_mode: ColorMode::Tangent,
            normal_k: 16,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_g < 0.0 || self.lambda_c < 0.0 || self.lambda_g + self.lambda_c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "term weights must be non-negative with a positive sum, got {} / {}",
                self.lambda_g, self.lambda_c
            )));
        }
        if self.pyramid.is_empty() || self.pyramid.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(
                "pyramid must contain positive voxel sizes".into(),
            ));
        }
        if self.pyramid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter(
                "pyramid voxel sizes must be strictly decreasing".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.max_correspondence_dist > 0.0) {
            return Err(Error::InvalidParameter(
                "max_correspondence_dist must be positive".into(),
            ));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(Error::InvalidParameter(
                "convergence_eps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Weights scaled so lambda_g + lambda_c = 1.
    fn normalized_weights(&self) -> (f64, f64) {
        let sum = self.lambda_g + self.lambda_c;
        (self.lambda_g / sum, self.lambda_c / sum)
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Source-to-target transform.
    pub transform: RigidTransform,
    /// Fraction of source points with an inlier correspondence.
    pub fitness: f64,
    /// RMS point distance over inlier correspondences.
    pub rmse_geometric: f64,
    /// RMS intensity residual over inlier correspondences.
    pub rmse_color: f64,
    pub iterations: usize,
    pub converged: bool,
    /// (before, after) objective values for each accepted Gauss-Newton
    /// step, evaluated on that step's correspondence set. After never
    /// exceeds before; tests assert this monotonicity.
    pub step_energies: Vec<(f64, f64)>,
}

const MIN_POINTS: usize = 10;

/// Per-target-point data for one pyramid level.
struct TargetLevel {
    cloud: PointCloud,
    index: NnIndex,
    normals: Vec<Vector3<f64>>,
    intensities: Vec<f64>,
    /// Tangent-plane intensity gradients (zero when colors are unused or
    /// the mode is nearest-neighbor).
    gradients: Vec<Vector3<f64>>,
}

fn build_target_level(
    target: &PointCloud,
    voxel: f64,
    params: &IcpParams,
    use_color: bool,
) -> Result<TargetLevel> {
    let mut level = voxel_downsample(target, voxel)?;
    if level.len() < 4 {
        // Too coarse for this object; fall back to the full target.
        level = target.clone();
    }
    if level.normals.is_none() {
        if level.len() > params.normal_k + 1 {
            level = estimate_normals(&level, params.normal_k)?;
        } else {
            level = estimate_normals(&level, level.len().saturating_sub(2).max(2))?;
        }
    }
    let normals = level.normals.clone().unwrap();
    let index = NnIndex::build(&level)?;
    let intensities: Vec<f64> = match (&level.colors, use_color) {
        (Some(colors), true) => colors.iter().map(|c| c.intensity()).collect(),
        _ => vec![0.0; level.len()],
    };
    let gradients = if use_color && params.color_mode == ColorMode::Tangent {
        color_gradients(&level, &index, &normals, &intensities, params.normal_k)
    } else {
        vec![Vector3::zeros(); level.len()]
    };
    Ok(TargetLevel {
        cloud: level,
        index,
        normals,
        intensities,
        gradients,
    })
}

/// Per-point tangent-plane intensity gradient by damped least squares over
/// the k-NN ring, constrained to the tangent plane.
fn color_gradients(
    cloud: &PointCloud,
    index: &NnIndex,
    normals: &[Vector3<f64>],
    intensities: &[f64],
    k: usize,
) -> Vec<Vector3<f64>> {
    let k = k.min(cloud.len().saturating_sub(1)).max(1);
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let n = normals[i];
            let proj = Matrix3::identity() - n * n.transpose();
            let mut a = Matrix3::zeros();
            let mut b = Vector3::zeros();
            for nb in index.knn(p, k + 1) {
                if nb.index == i {
                    continue;
                }
                // Neighbor offset projected into the tangent plane.
                let d = proj * (cloud.points[nb.index] - p);
                a += d * d.transpose();
                b += d * (intensities[nb.index] - intensities[i]);
            }
            // Penalize any normal component and damp the in-plane solve.
            let scale = a.trace().max(1e-18);
            a += n * n.transpose() * scale;
            a += Matrix3::identity() * (1e-9 * scale);
            a.try_inverse().map(|inv| proj * (inv * b)).unwrap_or_else(Vector3::zeros)
        })
        .collect()
}

struct Correspondence {
    src: usize,
    tgt: usize,
}

/// Joint objective over a fixed correspondence set. `total` includes both
/// terms; `modeled` contains only the residuals whose pose derivative the
/// solver models (in nearest-neighbor color mode the color residual is
/// constant within an iteration, so convergence is judged on `modeled`).
struct Energy {
    total: f64,
    modeled: f64,
}

fn objective(
    source: &PointCloud,
    src_intensities: &[f64],
    level: &TargetLevel,
    corr: &[Correspondence],
    transform: &RigidTransform,
    weights: (f64, f64),
    color_mode: ColorMode,
    use_color: bool,
) -> Energy {
    let (wg, wc) = weights;
    let mut total = 0.0;
    let mut modeled = 0.0;
    for c in corr {
        let x = transform.transform_point(&source.points[c.src]);
        let y = level.cloud.points[c.tgt];
        let n = level.normals[c.tgt];
        let rg = n.dot(&(x - y));
        total += wg * rg * rg;
        modeled += wg * rg * rg;
        if use_color {
            let predicted = match color_mode {
                ColorMode::Nn => level.intensities[c.tgt],
                ColorMode::Tangent => level.intensities[c.tgt] + level.gradients[c.tgt].dot(&(x - y)),
            };
            let rc = src_intensities[c.src] - predicted;
            total += wc * rc * rc;
            if color_mode == ColorMode::Tangent {
                modeled += wc * rc * rc;
            }
        }
    }
    let n = corr.len() as f64;
    Energy {
        total: total / n,
        modeled: modeled / n,
    }
}

/// Colored ICP: coarse-to-fine joint geometric + photometric registration.
pub fn icp_colored(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    params.validate()?;
    let (wg, wc) = params.normalized_weights();
    let use_color = wc > 0.0;
    if source.len() < MIN_POINTS {
        return Err(Error::TooSparse {
            got: source.len(),
            min: MIN_POINTS,
        });
    }
    if target.len() < MIN_POINTS {
        return Err(Error::TooSparse {
            got: target.len(),
            min: MIN_POINTS,
        });
    }
    if use_color && (source.colors.is_none() || target.colors.is_none()) {
        return Err(Error::InvalidParameter(
            "color term requires colors on both clouds".into(),
        ));
    }

    let mut transform = *init;
    let mut total_iterations = 0;
    let mut converged = false;
    let mut step_energies = Vec::new();
    let mut final_level: Option<(PointCloud, Vec<f64>, TargetLevel)> = None;

    for (li, &voxel) in params.pyramid.iter().enumerate() {
        let coarsest = li == 0;
        let level = build_target_level(target, voxel, params, use_color)?;
        let mut src_level = voxel_downsample(source, voxel)?;
        if src_level.len() < 4 {
            src_level = source.clone();
        }
        let src_intensities: Vec<f64> = match (&src_level.colors, use_color) {
            (Some(colors), true) => colors.iter().map(|c| c.intensity()).collect(),
            _ => vec![0.0; src_level.len()],
        };

        let mut prev_energy = f64::INFINITY;
        converged = false;
        for _ in 0..params.max_iters {
            total_iterations += 1;
            let corr = find_correspondences(
                &src_level,
                &level,
                &transform,
                params.max_correspondence_dist,
            );
            if corr.is_empty() {
                if coarsest {
                    return Err(Error::RegistrationFailed(
                        "no correspondences within range at the coarsest level".into(),
                    ));
                }
                break;
            }

            let energy_full = objective(
                &src_level,
                &src_intensities,
                &level,
                &corr,
                &transform,
                (wg, wc),
                params.color_mode,
                use_color,
            );

            let energy = energy_full.total;

            // Gauss-Newton normal equations over (rotation, translation).
            let mut h = Matrix6::<f64>::zeros();
            let mut g = Vector6::<f64>::zeros();
            for c in &corr {
                let x = transform.transform_point(&src_level.points[c.src]);
                let y = level.cloud.points[c.tgt];
                let n = level.normals[c.tgt];
                let rg = n.dot(&(x - y));
                let jg = stack_jacobian(&x, &n);
                h += wg * jg * jg.transpose();
                g += wg * jg * rg;
                if use_color {
                    let d = level.gradients[c.tgt];
                    let (predicted, grad) = match params.color_mode {
                        ColorMode::Nn => (level.intensities[c.tgt], Vector3::zeros()),
                        ColorMode::Tangent => (level.intensities[c.tgt] + d.dot(&(x - y)), d),
                    };
                    let rc = predicted - src_intensities[c.src];
                    if grad != Vector3::zeros() {
                        let jc = stack_jacobian(&x, &grad);
                        h += wc * jc * jc.transpose();
                        g += wc * jc * rc;
                    }
                }
            }
            // Tiny Levenberg damping keeps H invertible for degenerate
            // geometry (planes, cylinders).
            h += Matrix6::identity() * (1e-12 * h.trace().max(1e-30));
            let Some(h_inv) = h.try_inverse() else {
                break;
            };
            let delta: Vector6<f64> = -(h_inv * g);

            // Step halving: accept the largest step that does not increase
            // the objective over the current correspondences.
            let mut accepted = None;
            let mut step = 1.0;
            for _ in 0..12 {
                let cand = apply_twist(&transform, &(delta * step));
                let e = objective(
                    &src_level,
                    &src_intensities,
                    &level,
                    &corr,
                    &cand,
                    (wg, wc),
                    params.color_mode,
                    use_color,
                );
                if e.total <= energy {
                    accepted = Some((cand, e));
                    break;
                }
                step *= 0.5;
            }
            let Some((next, next_energy)) = accepted else {
                converged = true;
                break;
            };
            step_energies.push((energy, next_energy.total));
            transform = next;

            if prev_energy.is_finite() {
                let denom = prev_energy.abs().max(1e-30);
                if ((prev_energy - next_energy.modeled) / denom).abs() < params.convergence_eps {
                    converged = true;
                    break;
                }
            }
            prev_energy = next_energy.modeled;
        }
        if li + 1 == params.pyramid.len() {
            final_level = Some((src_level, src_intensities, level));
        }
    }

    let (src_level, src_intensities, level) = final_level.unwrap();
    let corr = find_correspondences(&src_level, &level, &transform, params.max_correspondence_dist);
    let fitness = corr.len() as f64 / src_level.len() as f64;
    let mut sum_g = 0.0;
    let mut sum_c = 0.0;
    for c in &corr {
        let x = transform.transform_point(&src_level.points[c.src]);
        let y = level.cloud.points[c.tgt];
        sum_g += (x - y).norm_squared();
        if use_color {
            let rc = src_intensities[c.src] - level.intensities[c.tgt];
            sum_c += rc * rc;
        }
    }
    let denom = corr.len().max(1) as f64;
    Ok(IcpResult {
        transform,
        fitness,
        rmse_geometric: (sum_g / denom).sqrt(),
        rmse_color: (sum_c / denom).sqrt(),
        iterations: total_iterations,
        converged,
        step_energies,
    })
}

/// Geometric-only ICP: the color weight is forced to zero; shares every
/// other code path with [`icp_colored`].
pub fn icp_geometric(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    let params = IcpParams {
        lambda_g: 1.0,
        lambda_c: 0.0,
        ..params.clone()
    };
    icp_colored(source, target, init, &params)
}

fn find_correspondences(
    source: &PointCloud,
    level: &TargetLevel,
    transform: &RigidTransform,
    max_dist: f64,
) -> Vec<Correspondence> {
    let mut corr = Vec::with_capacity(source.len());
    for (i, p) in source.points.iter().enumerate() {
        let x = transform.transform_point(p);
        let nb = level.index.nearest(&x);
        if nb.distance <= max_dist {
            corr.push(Correspondence {
                src: i,
                tgt: nb.index,
            });
        }
    }
    corr
}

/// Jacobian row (d residual / d twist) for a residual of the form
/// a . (x + omega x x + v): the stacked 6-vector [x cross a, a].
fn stack_jacobian(x: &Point3<f64>, a: &Vector3<f64>) -> Vector6<f64> {
    let top = x.coords.cross(a);
    Vector6::new(top.x, top.y, top.z, a.x, a.y, a.z)
}

/// Left-composes the small-motion twist (omega, v) onto the transform,
/// re-orthonormalizing through the exponential map.
fn apply_twist(t: &RigidTransform, delta: &Vector6<f64>) -> RigidTransform {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let rot = nalgebra::Rotation3::new(omega);
    let update = RigidTransform::from_parts(rot, v);
    update.compose(t)
}

/// Fitness (inlier fraction) and point-to-point RMSE of a fixed transform.
pub fn evaluate_registration(
    source: &PointCloud,
    target: &PointCloud,
    transform: &RigidTransform,
    inlier_dist: f64,
) -> Result<(f64, f64)> {
    if source.is_empty() {
        return Err(Error::EmptyInput("cannot evaluate with an empty source"));
    }
    if target.is_empty() {
        return Err(Error::EmptyInput("cannot evaluate with an empty target"));
    }
    if !(inlier_dist > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inlier_dist must be positive, got {inlier_dist}"
        )));
    }
    let index = NnIndex::build(target)?;
    let mut inliers = 0usize;
    let mut sum = 0.0;
    for p in &source.points {
        let x = transform.transform_point(p);
        let nb = index.nearest(&x);
        if nb.distance <= inlier_dist {
            inliers += 1;
            sum += nb.distance * nb.distance;
        }
    }
    let fitness = inliers as f64 / source.len() as f64;
    let rmse = if inliers > 0 {
        (sum / inliers as f64).sqrt()
    } else {
        0.0
    };
    Ok((fitness, rmse))
}
