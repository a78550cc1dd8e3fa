//! Synthetic labeled scenes, simulated pinhole frames with z-buffer
//! visibility, and scripted object motion. These generators are the
//! ground-truth oracles the rest of the crate is tested against.

use std::collections::BTreeMap;

use nalgebra::{Point3, Rotation3, UnitQuaternion, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, QuatWxyz, RgbColor, RigidTransform};
use crate::io::MaskImage;
use crate::projseg::{project_point, PinholeCamera};

// ---------------------------------------------------------------------------
// Low-level surface samplers (deterministic per seed).
// ---------------------------------------------------------------------------

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform samples on a full sphere shell of `radius`, centered at origin.
pub fn sample_sphere_shell(radius: f64, n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed);
    let points = (0..n)
        .map(|_| {
            let z = rng.gen_range(-1.0..=1.0);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z as f64).max(0.0).sqrt();
            Point3::new(radius * s * phi.cos(), radius * s * phi.sin(), radius * z)
        })
        .collect();
    PointCloud::from_points(points)
}

/// Uniform samples on the lower (z ≤ 0) hemisphere shell of `radius`,
/// centered at origin; the opening faces +z.
pub fn sample_hemisphere_shell(radius: f64, n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed);
    let points = (0..n)
        .map(|_| {
            let z = rng.gen_range(-1.0..=0.0);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z as f64).max(0.0).sqrt();
            Point3::new(radius * s * phi.cos(), radius * s * phi.sin(), radius * z)
        })
        .collect();
    PointCloud::from_points(points)
}

/// Uniform samples on the surface of an axis-aligned box with full extents
/// `dims`, centered at origin. Faces are chosen area-proportionally.
pub fn sample_box_surface(dims: &Vector3<f64>, n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed);
    let (x, y, z) = (dims.x, dims.y, dims.z);
    let areas = [y * z, y * z, x * z, x * z, x * y, x * y];
    let total: f64 = areas.iter().sum();
    let points = (0..n)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let mut face = 0usize;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    face = i;
                    break;
                }
                pick -= a;
            }
            let u = rng.gen_range(-0.5..0.5);
            let v = rng.gen_range(-0.5..0.5);
            match face {
                0 => Point3::new(-x / 2.0, u * y, v * z),
                1 => Point3::new(x / 2.0, u * y, v * z),
                2 => Point3::new(u * x, -y / 2.0, v * z),
                3 => Point3::new(u * x, y / 2.0, v * z),
                4 => Point3::new(u * x, v * y, -z / 2.0),
                _ => Point3::new(u * x, v * y, z / 2.0),
            }
        })
        .collect();
    PointCloud::from_points(points)
}

/// Open-top cup: cylindrical wall plus bottom disc. Base sits on z = 0,
/// the opening faces +z at z = `height`.
pub fn sample_cup(radius: f64, height: f64, n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed);
    let wall_area = std::f64::consts::TAU * radius * height;
    let bottom_area = std::f64::consts::PI * radius * radius;
    let total = wall_area + bottom_area;
    let points = (0..n)
        .map(|_| {
            if rng.gen_range(0.0..total) < wall_area {
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let z = rng.gen_range(0.0..height);
                Point3::new(radius * phi.cos(), radius * phi.sin(), z)
            } else {
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = radius * rng.gen::<f64>().sqrt();
                Point3::new(r * phi.cos(), r * phi.sin(), 0.0)
            }
        })
        .collect();
    PointCloud::from_points(points)
}

/// Cylinder wall (no caps), axis +z, centered at origin: z ∈ [−h/2, h/2].
pub fn sample_cylinder_wall(radius: f64, height: f64, n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed);
    let points = (0..n)
        .map(|_| {
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let z = rng.gen_range(-height / 2.0..height / 2.0);
            Point3::new(radius * phi.cos(), radius * phi.sin(), z)
        })
        .collect();
    PointCloud::from_points(points)
}

/// Closed cylinder (wall plus both end caps), axis +z, centered at origin.
pub fn sample_cylinder(radius: f64, height: f64, n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed);
    let wall = std::f64::consts::TAU * radius * height;
    let cap = std::f64::consts::PI * radius * radius;
    let total = wall + 2.0 * cap;
    let points = (0..n)
        .map(|_| {
            let pick = rng.gen_range(0.0..total);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            if pick < wall {
                let z = rng.gen_range(-height / 2.0..height / 2.0);
                Point3::new(radius * phi.cos(), radius * phi.sin(), z)
            } else {
                let r = radius * rng.gen::<f64>().sqrt();
                let z = if pick < wall + cap {
                    -height / 2.0
                } else {
                    height / 2.0
                };
                Point3::new(r * phi.cos(), r * phi.sin(), z)
            }
        })
        .collect();
    PointCloud::from_points(points)
}

/// Rectangular planar patch around `center` with the given `normal` and
/// half extents along two tangent axes.
pub fn sample_plane_patch(
    center: &Point3<f64>,
    normal: &Vector3<f64>,
    half_x: f64,
    half_y: f64,
    n: usize,
    seed: u64,
) -> PointCloud {
    let mut rng = rng_for(seed);
    let nrm = normal.normalize();
    let t1 = if nrm.x.abs() < 0.9 {
        nrm.cross(&Vector3::x()).normalize()
    } else {
        nrm.cross(&Vector3::y()).normalize()
    };
    let t2 = nrm.cross(&t1);
    let points = (0..n)
        .map(|_| {
            let u = rng.gen_range(-half_x..half_x);
            let v = rng.gen_range(-half_y..half_y);
            center + t1 * u + t2 * v
        })
        .collect();
    PointCloud::from_points(points)
}

/// Flat annulus in the plane z = `z`, inner/outer radii as given.
pub fn sample_annulus(r_in: f64, r_out: f64, z: f64, n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed);
    let points = (0..n)
        .map(|_| {
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            // Area-uniform radius in the annulus.
            let r = (rng.gen::<f64>() * (r_out * r_out - r_in * r_in) + r_in * r_in).sqrt();
            Point3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect();
    PointCloud::from_points(points)
}

// ---------------------------------------------------------------------------
// Scene specification.
// ---------------------------------------------------------------------------

/// Serializable pose: quaternion in (w, x, y, z) order plus translation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseSpec {
    pub quat_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self {
            quat_wxyz: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0, 0.0, 0.0],
        }
    }
}

impl PoseSpec {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        let q = QuatWxyz {
            w: self.quat_wxyz[0],
            x: self.quat_wxyz[1],
            y: self.quat_wxyz[2],
            z: self.quat_wxyz[3],
        };
        let rot = q.to_transform()?;
        Ok(RigidTransform::from_parts(
            *rot.rotation(),
            Vector3::new(self.translation[0], self.translation[1], self.translation[2]),
        ))
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        let q = QuatWxyz::from_transform(t);
        Self {
            quat_wxyz: [q.w, q.x, q.y, q.z],
            translation: [t.translation().x, t.translation().y, t.translation().z],
        }
    }
}

/// Object surface color assignment, evaluated in the object's local frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColorScheme {
    /// Single color everywhere.
    Uniform { rgb: [f64; 3] },
    /// Smooth blend from `low` to `high` around the local z axis: the blend
    /// weight peaks at azimuth `center_deg` and falls to zero at
    /// ±`width_deg`. Breaks rotational color symmetry on round objects.
    AzimuthalBlend {
        low: [f64; 3],
        high: [f64; 3],
        center_deg: f64,
        width_deg: f64,
    },
}

impl ColorScheme {
    fn color_at(&self, local: &Point3<f64>) -> RgbColor {
        match self {
            ColorScheme::Uniform { rgb } => RgbColor::new(rgb[0], rgb[1], rgb[2]),
            ColorScheme::AzimuthalBlend {
                low,
                high,
                center_deg,
                width_deg,
            } => {
                let azimuth = local.y.atan2(local.x).to_degrees();
                let mut delta = (azimuth - center_deg).rem_euclid(360.0);
                if delta > 180.0 {
                    delta -= 360.0;
                }
                let t = (delta.abs() / width_deg).min(1.0);
                let w = (t * std::f64::consts::FRAC_PI_2).cos();
                RgbColor::new(
                    low[0] + w * (high[0] - low[0]),
                    low[1] + w * (high[1] - low[1]),
                    low[2] + w * (high[2] - low[2]),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Cup,
    Box,
    Cylinder,
    SphereShell,
    Composite,
}

/// One object of a synthetic scene. Dimension conventions (meters):
/// cup `[radius, height]`; box `[x, y, z]` full extents; cylinder
/// `[radius, height]` (closed); sphere_shell `[radius]`; composite
/// `[box_x, box_y, box_z, sphere_radius]` — a box with an off-center
/// sphere shell attached, deliberately asymmetric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    pub dimensions: Vec<f64>,
    #[serde(default)]
    pub pose: PoseSpec,
    pub color: ColorScheme,
    pub label: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSpec {
    pub center: [f64; 3],
    pub half_extent: [f64; 2],
    pub label: i64,
    #[serde(default = "default_table_color")]
    pub color: [f64; 3],
}

fn default_table_color() -> [f64; 3] {
    [0.5, 0.45, 0.4]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GreenCubeSpec {
    pub size_m: f64,
    #[serde(default)]
    pub pose: PoseSpec,
    pub label: i64,
}

/// Full scene description; serializable as the CLI's `--spec` JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub table: Option<TableSpec>,
    #[serde(default)]
    pub green_cube: Option<GreenCubeSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Per-channel uniform color jitter amplitude, clamped after addition.
    #[serde(default)]
    pub color_noise: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut labels = std::collections::HashSet::new();
        let mut check_label = |l: i64| -> Result<()> {
            if !labels.insert(l) {
                return Err(Error::ValidationError(format!("duplicate label {l}")));
            }
            Ok(())
        };
        for obj in &self.objects {
            check_label(obj.label)?;
            let expected = match obj.shape {
                ShapeKind::Cup | ShapeKind::Cylinder => 2,
                ShapeKind::Box => 3,
                ShapeKind::SphereShell => 1,
                ShapeKind::Composite => 4,
            };
            if obj.dimensions.len() != expected {
                return Err(Error::ValidationError(format!(
                    "shape {:?} needs {expected} dimensions, got {}",
                    obj.shape,
                    obj.dimensions.len()
                )));
            }
            if obj.dimensions.iter().any(|&d| d <= 0.0) {
                return Err(Error::ValidationError(format!(
                    "label {}: dimensions must be positive",
                    obj.label
                )));
            }
            obj.pose.to_transform()?;
        }
        if let Some(table) = &self.table {
            check_label(table.label)?;
            if table.half_extent.iter().any(|&e| e <= 0.0) {
                return Err(Error::ValidationError("table extent must be positive".into()));
            }
        }
        if let Some(cube) = &self.green_cube {
            check_label(cube.label)?;
            if cube.size_m <= 0.0 {
                return Err(Error::ValidationError("green cube size must be positive".into()));
            }
            cube.pose.to_transform()?;
        }
        if self.color_noise < 0.0 {
            return Err(Error::ValidationError("color noise must be non-negative".into()));
        }
        Ok(())
    }
}

fn object_area(obj: &ObjectSpec) -> f64 {
    use std::f64::consts::{PI, TAU};
    let d = &obj.dimensions;
    match obj.shape {
        ShapeKind::Cup => TAU * d[0] * d[1] + PI * d[0] * d[0],
        ShapeKind::Box => 2.0 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2]),
        ShapeKind::Cylinder => TAU * d[0] * d[1] + 2.0 * PI * d[0] * d[0],
        ShapeKind::SphereShell => 4.0 * PI * d[0] * d[0],
        ShapeKind::Composite => {
            2.0 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2]) + 4.0 * PI * d[3] * d[3]
        }
    }
}

fn mix_seed(base: u64, label: i64) -> u64 {
    (base ^ (label as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5bf0_3635
}

/// Samples one object in its local frame (not yet posed), centered so the
/// sampled centroid is the local origin.
pub fn sample_object_canonical(obj: &ObjectSpec, n: usize, seed: u64) -> PointCloud {
    let d = &obj.dimensions;
    let mut cloud = match obj.shape {
        ShapeKind::Cup => sample_cup(d[0], d[1], n, seed),
        ShapeKind::Box => sample_box_surface(&Vector3::new(d[0], d[1], d[2]), n, seed),
        ShapeKind::Cylinder => sample_cylinder(d[0], d[1], n, seed),
        ShapeKind::SphereShell => sample_sphere_shell(d[0], n, seed),
        ShapeKind::Composite => {
            let box_area = 2.0 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2]);
            let total = object_area(obj);
            let n_box = ((box_area / total) * n as f64).round() as usize;
            let body = sample_box_surface(&Vector3::new(d[0], d[1], d[2]), n_box, seed);
            let head = sample_sphere_shell(d[3], n - n_box, seed ^ 0xABCD)
                .translated(Vector3::new(d[0] / 2.0, 0.0, d[2] / 2.0));
            body.concat(&head)
        }
    };
    // Color in the local frame, then center at the sampled centroid.
    let colors = cloud.points.iter().map(|p| obj.color.color_at(p)).collect();
    cloud.colors = Some(colors);
    cloud.labels = Some(vec![obj.label; cloud.len()]);
    if let Some(c) = cloud.centroid() {
        cloud = cloud.translated(-c.coords);
    }
    cloud
}

fn apply_color_noise(cloud: &mut PointCloud, amplitude: f64, rng: &mut ChaCha8Rng) {
    if amplitude <= 0.0 {
        return;
    }
    if let Some(colors) = cloud.colors.as_mut() {
        for c in colors.iter_mut() {
            *c = RgbColor::new(
                c.r + rng.gen_range(-amplitude..=amplitude),
                c.g + rng.gen_range(-amplitude..=amplitude),
                c.b + rng.gen_range(-amplitude..=amplitude),
            )
            .clamped();
        }
    }
}

/// Static scene parts: table patch and green cube, posed in world frame.
fn sample_statics(spec: &SceneSpec, density: f64) -> Result<PointCloud> {
    let mut out = PointCloud::from_points(Vec::new());
    out.colors = Some(Vec::new());
    out.labels = Some(Vec::new());
    if let Some(table) = &spec.table {
        let area = 4.0 * table.half_extent[0] * table.half_extent[1];
        let n = (area * density).round() as usize;
        let mut cloud = sample_plane_patch(
            &Point3::new(table.center[0], table.center[1], table.center[2]),
            &Vector3::z(),
            table.half_extent[0],
            table.half_extent[1],
            n,
            mix_seed(spec.seed, table.label),
        );
        cloud.colors = Some(vec![
            RgbColor::new(table.color[0], table.color[1], table.color[2]);
            cloud.len()
        ]);
        cloud.labels = Some(vec![table.label; cloud.len()]);
        out = out.concat(&cloud);
    }
    if let Some(cube) = &spec.green_cube {
        let area = 6.0 * cube.size_m * cube.size_m;
        let n = (area * density).round() as usize;
        let mut cloud = sample_box_surface(
            &Vector3::new(cube.size_m, cube.size_m, cube.size_m),
            n,
            mix_seed(spec.seed, cube.label),
        );
        cloud = cube.pose.to_transform()?.apply(&cloud);
        cloud.colors = Some(vec![RgbColor::new(0.0, 1.0, 0.0); cloud.len()]);
        cloud.labels = Some(vec![cube.label; cloud.len()]);
        out = out.concat(&cloud);
    }
    Ok(out)
}

/// Canonical per-object clouds plus their spec poses, and the static scene
/// parts — the building blocks of both static scenes and frame streams.
pub struct SampledScene {
    pub objects: Vec<(i64, PointCloud, RigidTransform)>,
    pub statics: PointCloud,
}

/// Samples the scene's objects canonically and the static parts in world
/// frame at `density` points per square meter.
pub fn sample_scene_parts(spec: &SceneSpec, density: f64) -> Result<SampledScene> {
    spec.validate()?;
    if density <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "density must be positive, got {density}"
        )));
    }
    let mut objects = Vec::new();
    for obj in &spec.objects {
        let n = (object_area(obj) * density).round() as usize;
        let cloud = sample_object_canonical(obj, n, mix_seed(spec.seed, obj.label));
        objects.push((obj.label, cloud, obj.pose.to_transform()?));
    }
    let mut statics = sample_statics(spec, density)?;
    let mut rng = rng_for(spec.seed ^ 0xC01_0C);
    apply_color_noise(&mut statics, spec.color_noise, &mut rng);
    for (_, cloud, _) in objects.iter_mut() {
        apply_color_noise(cloud, spec.color_noise, &mut rng);
    }
    Ok(SampledScene { objects, statics })
}

/// Samples the full scene at rest: every object at its spec pose plus the
/// static parts, labeled and colored.
pub fn sample_scene(spec: &SceneSpec, density: f64) -> Result<PointCloud> {
    let parts = sample_scene_parts(spec, density)?;
    let mut out = parts.statics;
    for (_, cloud, pose) in &parts.objects {
        out = pose.apply(cloud).concat(&out);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Frame rendering.
// ---------------------------------------------------------------------------

/// One simulated observation: the visible cloud, per-label masks, and the
/// ground-truth poses that produced it.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub timestamp: f64,
    pub camera: PinholeCamera,
    pub visible_cloud: PointCloud,
    pub masks: BTreeMap<i64, MaskImage>,
    pub true_poses: BTreeMap<i64, RigidTransform>,
}

impl FrameSample {
    /// The visible points carrying `label`.
    pub fn partial_for(&self, label: i64) -> PointCloud {
        let Some(labels) = self.visible_cloud.labels.as_ref() else {
            return PointCloud::from_points(Vec::new());
        };
        let idx: Vec<usize> = (0..self.visible_cloud.len())
            .filter(|&i| labels[i] == label)
            .collect();
        self.visible_cloud.select(&idx)
    }
}

/// Renders the world cloud into the camera with per-pixel nearest-depth
/// visibility (points splatted over `splat_px`-radius discs); masks are
/// rasterized per label from the surviving points. Occlusion between
/// objects comes for free: occluder points simply win the depth test.
pub fn render_frame(
    cloud: &PointCloud,
    camera: &PinholeCamera,
    timestamp: f64,
    true_poses: BTreeMap<i64, RigidTransform>,
    splat_px: usize,
) -> Result<FrameSample> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut projections: Vec<Option<(usize, usize, f64)>> = Vec::with_capacity(cloud.len());
    let r = splat_px as isize;
    for p in &cloud.points {
        let proj = project_point(camera, p).map(|(u, v, d)| (u as usize, v as usize, d));
        if let Some((u, v, d)) = proj {
            for dv in -r..=r {
                for du in -r..=r {
                    if du * du + dv * dv > r * r {
                        continue;
                    }
                    let uu = u as isize + du;
                    let vv = v as isize + dv;
                    if uu >= 0 && vv >= 0 && (uu as usize) < w && (vv as usize) < h {
                        let cell = &mut zbuf[vv as usize * w + uu as usize];
                        if d < *cell {
                            *cell = d;
                        }
                    }
                }
            }
        }
        projections.push(proj);
    }
    // A point survives when nothing splatted meaningfully nearer onto its
    // own pixel; the 1% relative slack keeps same-surface neighbors alive
    // while still culling genuinely occluded back surfaces.
    let visible: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            projections[i].map_or(false, |(u, v, d)| d <= zbuf[v * w + u] * 1.01 + 1e-9)
        })
        .collect();
    let visible_cloud = cloud.select(&visible);
    let mut masks: BTreeMap<i64, MaskImage> = BTreeMap::new();
    if let Some(labels) = visible_cloud.labels.as_ref() {
        for (i, &label) in labels.iter().enumerate() {
            let (u, v, _) = projections[visible[i]].unwrap();
            masks
                .entry(label)
                .or_insert_with(|| MaskImage::new(w, h))
                .set(u, v, true);
        }
    }
    Ok(FrameSample {
        timestamp,
        camera: camera.clone(),
        visible_cloud,
        masks,
        true_poses,
    })
}

// ---------------------------------------------------------------------------
// Scripted motion.
// ---------------------------------------------------------------------------

/// A timed world pose for one object label.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub time: f64,
    pub label: i64,
    pub pose: RigidTransform,
}

/// Interpolates the pose for `label` at time `t` from its keyframes:
/// linear in translation, spherical-linear in rotation, clamped at the
/// ends. Falls back to `base` when the label has no keyframes.
fn pose_at(keyframes: &[(f64, RigidTransform)], base: &RigidTransform, t: f64) -> RigidTransform {
    if keyframes.is_empty() {
        return base.clone();
    }
    if t <= keyframes[0].0 {
        return keyframes[0].1.clone();
    }
    if t >= keyframes[keyframes.len() - 1].0 {
        return keyframes[keyframes.len() - 1].1.clone();
    }
    let i = keyframes.partition_point(|(kt, _)| *kt <= t);
    let (t0, ref a) = keyframes[i - 1];
    let (t1, ref b) = keyframes[i];
    let alpha = (t - t0) / (t1 - t0);
    let trans = a.translation() * (1.0 - alpha) + b.translation() * alpha;
    let qa = UnitQuaternion::from_rotation_matrix(a.rotation());
    let qb = UnitQuaternion::from_rotation_matrix(b.rotation());
    let q = qa.slerp(&qb, alpha);
    RigidTransform::from_parts(Rotation3::from(q), trans)
}

/// Iterator of rendered frames driven by per-object keyframe scripts.
pub struct FrameStream {
    scene: SampledScene,
    scripts: BTreeMap<i64, Vec<(f64, RigidTransform)>>,
    times: Vec<f64>,
    camera: PinholeCamera,
    splat_px: usize,
    next: usize,
}

impl Iterator for FrameStream {
    type Item = FrameSample;

    fn next(&mut self) -> Option<FrameSample> {
        if self.next >= self.times.len() {
            return None;
        }
        let t = self.times[self.next];
        self.next += 1;
        let mut world = self.scene.statics.clone();
        let mut poses = BTreeMap::new();
        for (label, cloud, base) in &self.scene.objects {
            let pose = self
                .scripts
                .get(label)
                .map_or_else(|| base.clone(), |kf| pose_at(kf, base, t));
            world = world.concat(&pose.apply(cloud));
            poses.insert(*label, pose);
        }
        Some(
            render_frame(&world, &self.camera, t, poses, self.splat_px)
                .expect("camera validated at stream construction"),
        )
    }
}

/// Builds a frame stream for the scene: objects follow their keyframe
/// trajectories, everything else stays put. Keyframe timestamps must be
/// strictly increasing per label, as must the frame times.
pub fn scripted_motion(
    spec: &SceneSpec,
    density: f64,
    trajectory: &[Keyframe],
    times: &[f64],
    camera: &PinholeCamera,
    splat_px: usize,
) -> Result<FrameStream> {
    camera.validate()?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "frame times must be strictly increasing".into(),
        ));
    }
    let mut scripts: BTreeMap<i64, Vec<(f64, RigidTransform)>> = BTreeMap::new();
    for kf in trajectory {
        scripts.entry(kf.label).or_default().push((kf.time, kf.pose.clone()));
    }
    for (label, kfs) in &scripts {
        if kfs.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidParameter(format!(
                "keyframe timestamps for label {label} must be strictly increasing"
            )));
        }
        if !spec.objects.iter().any(|o| o.label == *label) {
            return Err(Error::InvalidParameter(format!(
                "trajectory references unknown label {label}"
            )));
        }
    }
    let scene = sample_scene_parts(spec, density)?;
    Ok(FrameStream {
        scene,
        scripts,
        times: times.to_vec(),
        camera: camera.clone(),
        splat_px,
        next: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Unit;

    fn cup_spec() -> SceneSpec {
        SceneSpec {
            objects: vec![ObjectSpec {
                shape: ShapeKind::Cup,
                dimensions: vec![0.04, 0.1],
                pose: PoseSpec {
                    translation: [0.0, 0.0, 0.05],
                    ..PoseSpec::default()
                },
                color: ColorScheme::Uniform { rgb: [0.8, 0.2, 0.2] },
                label: 1,
            }],
            table: Some(TableSpec {
                center: [0.0, 0.0, 0.0],
                half_extent: [0.3, 0.3],
                label: 2,
                color: default_table_color(),
            }),
            green_cube: None,
            seed: 11,
            color_noise: 0.0,
        }
    }

    fn front_camera() -> PinholeCamera {
        PinholeCamera {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
            t_world_cam: crate::projseg::tests::look_at_origin(Vector3::new(1.0, 0.0, 0.4), 0.8),
        }
    }

    #[test]
    fn unit_box_density_count() {
        let spec = SceneSpec {
            objects: vec![ObjectSpec {
                shape: ShapeKind::Box,
                dimensions: vec![1.0, 1.0, 1.0],
                pose: PoseSpec::default(),
                color: ColorScheme::Uniform { rgb: [0.5; 3] },
                label: 1,
            }],
            table: None,
            green_cube: None,
            seed: 0,
            color_noise: 0.0,
        };
        let d = 2000.0;
        let cloud = sample_scene(&spec, d).unwrap();
        let expected = 6.0 * d;
        assert!(
            ((cloud.len() as f64) - expected).abs() / expected < 0.02,
            "{} vs {}",
            cloud.len(),
            expected
        );
    }

    #[test]
    fn empty_spec_empty_cloud() {
        let spec = SceneSpec {
            objects: vec![],
            table: None,
            green_cube: None,
            seed: 0,
            color_noise: 0.0,
        };
        assert!(sample_scene(&spec, 1000.0).unwrap().is_empty());
    }

    #[test]
    fn fixed_seed_bitwise_identical() {
        let spec = cup_spec();
        let a = sample_scene(&spec, 30_000.0).unwrap();
        let b = sample_scene(&spec, 30_000.0).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(
            a.colors.as_ref().map(|c| c.len()),
            b.colors.as_ref().map(|c| c.len())
        );
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn duplicate_labels_rejected() {
        let mut spec = cup_spec();
        spec.table.as_mut().unwrap().label = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sphere_front_view_hides_back() {
        let n = 8000;
        let mut cloud = sample_sphere_shell(0.1, n, 3);
        cloud.labels = Some(vec![7; n]);
        let camera = front_camera();
        let frame = render_frame(&cloud, &camera, 0.0, BTreeMap::new(), 2).unwrap();
        let frac = frame.visible_cloud.len() as f64 / n as f64;
        assert!(frac <= 0.55, "visible fraction {frac}");
        assert!(frac > 0.2, "visible fraction suspiciously low: {frac}");
    }

    #[test]
    fn occluder_reduces_visibility() {
        let mut cup = sample_cup(0.04, 0.1, 4000, 5);
        cup.labels = Some(vec![1; cup.len()]);
        let camera = front_camera();
        let clear = render_frame(&cup, &camera, 0.0, BTreeMap::new(), 1).unwrap();
        // Box between camera (toward +x, raised) and the cup; it must sit on
        // the camera-to-cup line, which passes x = 0.25 at z ≈ 0.10–0.17.
        let mut blocker =
            sample_box_surface(&Vector3::new(0.02, 0.2, 0.12), 8000, 6)
                .translated(Vector3::new(0.25, 0.0, 0.135));
        blocker.labels = Some(vec![9; blocker.len()]);
        let scene = cup.concat(&blocker);
        let occluded = render_frame(&scene, &camera, 0.0, BTreeMap::new(), 1).unwrap();
        let count = |f: &FrameSample| {
            f.visible_cloud
                .labels
                .as_ref()
                .map_or(0, |ls| ls.iter().filter(|&&l| l == 1).count())
        };
        assert!(count(&occluded) < count(&clear) / 2);
    }

    #[test]
    fn empty_scene_empty_masks() {
        let cloud = PointCloud::from_points(Vec::new());
        let frame = render_frame(&cloud, &front_camera(), 0.0, BTreeMap::new(), 0).unwrap();
        assert!(frame.masks.is_empty());
        assert!(frame.visible_cloud.is_empty());
    }

    #[test]
    fn masks_consistent_with_visible_projection() {
        let spec = cup_spec();
        let cloud = sample_scene(&spec, 60_000.0).unwrap();
        let camera = front_camera();
        let frame = render_frame(&cloud, &camera, 0.0, BTreeMap::new(), 0).unwrap();
        // Every visible labeled point's pixel is set in its label's mask,
        // and every set pixel is hit by at least one visible point.
        let mut hit: BTreeMap<i64, std::collections::HashSet<(usize, usize)>> = BTreeMap::new();
        let labels = frame.visible_cloud.labels.as_ref().unwrap();
        for (i, p) in frame.visible_cloud.points.iter().enumerate() {
            let (u, v, _) = project_point(&camera, p).unwrap();
            let (u, v) = (u as usize, v as usize);
            assert!(frame.masks[&labels[i]].is_set(u, v));
            hit.entry(labels[i]).or_default().insert((u, v));
        }
        for (label, mask) in &frame.masks {
            assert_eq!(mask.count_set(), hit[label].len());
        }
    }

    #[test]
    fn constant_pose_frames_identical() {
        let spec = cup_spec();
        let camera = front_camera();
        let frames: Vec<FrameSample> =
            scripted_motion(&spec, 30_000.0, &[], &[0.0, 0.1, 0.2], &camera, 0)
                .unwrap()
                .collect();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].visible_cloud.points, frames[1].visible_cloud.points);
        assert_eq!(frames[1].visible_cloud.points, frames[2].visible_cloud.points);
    }

    #[test]
    fn self_rotation_interpolates_exactly() {
        let spec = cup_spec();
        let base = spec.objects[0].pose.to_transform().unwrap();
        let axis = Unit::new_normalize(Vector3::z());
        let end = RigidTransform::from_parts(
            Rotation3::from_axis_angle(&axis, 90_f64.to_radians()),
            base.translation(),
        );
        let trajectory = vec![
            Keyframe { time: 0.0, label: 1, pose: base.clone() },
            Keyframe { time: 10.0, label: 1, pose: end },
        ];
        let times: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let camera = front_camera();
        let stream =
            scripted_motion(&spec, 10_000.0, &trajectory, &times, &camera, 0).unwrap();
        let mut prev: Option<RigidTransform> = None;
        for frame in stream {
            let pose = frame.true_poses[&1].clone();
            if let Some(p) = prev {
                let step = p.rotation_angle_to(&pose).to_degrees();
                assert!((step - 9.0).abs() < 1e-9, "step {step}°");
            }
            prev = Some(pose);
        }
    }

    #[test]
    fn entering_object_crosses_line() {
        let mut spec = cup_spec();
        spec.objects[0].pose = PoseSpec::default();
        let start = RigidTransform::from_translation(Vector3::new(0.5, 0.0, 0.05));
        let end = RigidTransform::from_translation(Vector3::new(-0.1, 0.0, 0.05));
        let trajectory = vec![
            Keyframe { time: 0.0, label: 1, pose: start },
            Keyframe { time: 6.0, label: 1, pose: end },
        ];
        let times: Vec<f64> = (0..=6).map(|i| i as f64).collect();
        let camera = front_camera();
        let stream =
            scripted_motion(&spec, 10_000.0, &trajectory, &times, &camera, 0).unwrap();
        // x = 0.2 workspace line is crossed between t=3 (x=0.2) and t=4.
        let xs: Vec<f64> = stream.map(|f| f.true_poses[&1].translation().x).collect();
        assert!((xs[3] - 0.2).abs() < 1e-12);
        assert!(xs[2] > 0.2 && xs[4] < 0.2);
    }

    #[test]
    fn non_monotone_script_rejected() {
        let spec = cup_spec();
        let camera = front_camera();
        let pose = RigidTransform::identity();
        let bad = vec![
            Keyframe { time: 1.0, label: 1, pose: pose.clone() },
            Keyframe { time: 1.0, label: 1, pose },
        ];
        assert!(matches!(
            scripted_motion(&spec, 1000.0, &bad, &[0.0, 1.0], &camera, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn true_pose_reproduces_scene_points() {
        let spec = cup_spec();
        let parts = sample_scene_parts(&spec, 20_000.0).unwrap();
        let (label, canonical, pose) = &parts.objects[0];
        assert_eq!(*label, 1);
        let world = pose.apply(canonical);
        // Independent: transform each point by the pose matrix.
        let m = pose.matrix();
        for (a, p) in world.points.iter().zip(&canonical.points) {
            let v = m * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            assert!((a.coords - Vector3::new(v.x, v.y, v.z)).norm() < 1e-12);
        }
    }

    #[test]
    fn color_noise_stays_clamped() {
        let mut spec = cup_spec();
        spec.color_noise = 0.05;
        let cloud = sample_scene(&spec, 20_000.0).unwrap();
        for c in cloud.colors.as_ref().unwrap() {
            assert!((0.0..=1.0).contains(&c.r));
            assert!((0.0..=1.0).contains(&c.g));
            assert!((0.0..=1.0).contains(&c.b));
        }
    }
}
