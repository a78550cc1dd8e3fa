//! End-to-end acceptance suite. Each test covers one release criterion and
//! prints a single `criterion N: PASS` line on success (test failure marks
//! the criterion FAIL). The criteria intentionally re-derive their oracles
//! from the public API instead of reusing internal test helpers.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use scenesync::filter::voxel_downsample;
use scenesync::geom::{PointCloud, QuatWxyz, RgbColor, RigidTransform};
use scenesync::io::MaskImage;
use scenesync::mesh::{
    canonicalize_asset, convex_hull, hull_outside_distance, smooth_feature_aware, SmoothingParams,
    TriangleMesh,
};
use scenesync::nn::NnIndex;
use scenesync::opening::{detect_opening, OpeningParams};
use scenesync::projseg::{
    build_asset_pipeline, project_point, segment_by_views, AssetPipelineParams, PinholeCamera,
    ViewSet,
};
use scenesync::register::{icp_colored, icp_geometric, IcpParams};
use scenesync::scalecal::calibrate_scale;
use scenesync::scalecal::GreenThresholds;
use scenesync::synth::{
    sample_cup, sample_cylinder, sample_object_canonical, sample_plane_patch, ColorScheme,
    FrameSample, ObjectSpec, PoseSpec, ShapeKind,
};
use scenesync::tracker::{
    complete_object, run_avoidance_eval, success_rate, AssetRecord, AvoidanceTally,
    AvoidanceTrial, MemoryBank, SyncState, TrackStatus, TrackerParams,
};

fn pass(n: usize, what: &str) {
    eprintln!("criterion {n}: PASS — {what}");
}

// ---------------------------------------------------------------------------
// Shared helpers.
// ---------------------------------------------------------------------------

/// Camera at `eye` looking at `target`; +x right, +y down, +z forward.
fn look_at(eye: Point3<f64>, target: Point3<f64>) -> RigidTransform {
    let forward = (target - eye).normalize();
    let up_hint = if forward.z.abs() > 0.99 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let right = forward.cross(&up_hint).normalize();
    let down = forward.cross(&right);
    RigidTransform::from_parts(
        Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward])),
        eye.coords,
    )
}

fn camera_at(eye: Point3<f64>, target: Point3<f64>) -> PinholeCamera {
    PinholeCamera {
        fx: 525.0,
        fy: 525.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
        t_world_cam: look_at(eye, target),
    }
}

/// Point-splat mask of the listed points (one pixel per point).
fn render_mask(cloud: &PointCloud, camera: &PinholeCamera, indices: &[usize]) -> MaskImage {
    let mut mask = MaskImage::new(camera.width, camera.height);
    for &i in indices {
        if let Some((u, v, _)) = project_point(camera, &cloud.points[i]) {
            mask.set(u as usize, v as usize, true);
        }
    }
    mask
}

fn pose_error(estimate: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    (
        estimate.rotation_angle_to(truth).to_degrees(),
        estimate.translation_distance_to(truth),
    )
}

/// Asymmetric colored box, canonical (centroid at the origin).
fn box_canonical(n: usize, seed: u64) -> PointCloud {
    let spec = ObjectSpec {
        shape: ShapeKind::Box,
        dimensions: vec![0.09, 0.13, 0.06],
        pose: PoseSpec::default(),
        color: ColorScheme::AzimuthalBlend {
            low: [0.2, 0.3, 0.6],
            high: [0.8, 0.5, 0.2],
            center_deg: 30.0,
            width_deg: 120.0,
        },
        label: 7,
    };
    let cloud = sample_object_canonical(&spec, n, seed);
    let centroid = cloud.centroid().unwrap();
    cloud.translated(-centroid.coords)
}

fn bank_with(label: i64, canonical: &PointCloud) -> MemoryBank {
    let mesh = convex_hull(canonical).unwrap();
    let (mesh, cloud, _) = canonicalize_asset(&mesh, canonical).unwrap();
    let mut bank = MemoryBank::new();
    bank.add(AssetRecord {
        id: label.to_string(),
        canonical_cloud: cloud,
        mesh,
        scale_calibrated: true,
    })
    .unwrap();
    bank
}

fn dummy_camera() -> PinholeCamera {
    camera_at(Point3::new(1.0, 0.0, 0.6), Point3::origin())
}

/// Frame with each object posed into world, optionally cut to the local
/// +x half to mimic a one-sided view.
fn make_frame(t: f64, parts: &[(i64, &PointCloud, RigidTransform)], half: bool) -> FrameSample {
    let mut world: Option<PointCloud> = None;
    let mut poses = BTreeMap::new();
    for (label, canonical, pose) in parts {
        let mut posed = pose.apply(canonical);
        if half {
            let inv = pose.inverse();
            let idx: Vec<usize> = (0..posed.len())
                .filter(|&i| inv.transform_point(&posed.points[i]).x >= 0.0)
                .collect();
            posed = posed.select(&idx);
        }
        world = Some(match world {
            Some(w) => w.concat(&posed),
            None => posed,
        });
        poses.insert(*label, pose.clone());
    }
    FrameSample {
        timestamp: t,
        camera: dummy_camera(),
        visible_cloud: world.unwrap_or_else(|| PointCloud::from_points(Vec::new())),
        masks: BTreeMap::new(),
        true_poses: poses,
    }
}

/// Fraction of `reference` points with a `source` neighbor within `r`.
fn coverage(reference: &PointCloud, source: &PointCloud, r: f64) -> f64 {
    let idx = NnIndex::build(source).unwrap();
    let hit = reference
        .points
        .iter()
        .filter(|p| idx.nearest(p).distance <= r)
        .count();
    hit as f64 / reference.len() as f64
}

// ---------------------------------------------------------------------------
// 1. Success-rate formula exactness against the published table.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_success_rate_reproduces_reported_cells() {
    // FA/EA/CO column sums and the published percentages. Two of the six
    // published per-box breakdowns are internally inconsistent (their
    // counts do not sum to 4 boxes x 20 trials); the sums below are the
    // unique corrections consistent with both N = 80 and the published
    // percentage.
    let cells: [(usize, usize, usize, f64); 6] = [
        (21, 24, 35, 50.3),
        (8, 27, 45, 37.0),
        (46, 28, 6, 85.5),
        (34, 29, 17, 71.5),
        (62, 16, 2, 93.5),
        (43, 25, 12, 78.8),
    ];
    for (fa, ea, co, expected) in cells {
        let tally = AvoidanceTally::new(fa, ea, co);
        assert_eq!(tally.n_total(), 80);
        let sr = success_rate(&tally).unwrap();
        // Exact recomputation, rounded to one decimal like the table.
        let rounded = (sr * 10.0).round() / 10.0;
        assert!(
            (rounded - expected).abs() <= 0.05,
            "({fa},{ea},{co}) -> {sr} (rounded {rounded}), expected {expected}"
        );
    }
    pass(1, "all six SR cells recomputed exactly from FA/EA/CO sums");
}

// ---------------------------------------------------------------------------
// 2. Opening detection on randomized open-top cups.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_opening_detection_randomized_cups() {
    let mut ok = 0;
    let n_trials = 20;
    for seed in 0..n_trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let radius = rng.gen_range(0.03..0.06);
        let height = rng.gen_range(0.06..0.15);
        let cup = sample_cup(radius, height, 5000, seed);
        let axis = Unit::new_normalize(Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let pose = RigidTransform::from_parts(
            Rotation3::from_axis_angle(&axis, rng.gen_range(0.0..std::f64::consts::TAU)),
            Vector3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            ),
        );
        let posed = pose.apply(&cup);
        let result = match detect_opening(&posed, &OpeningParams::default()) {
            Ok(r) if r.converged => r,
            _ => continue,
        };
        // The cup opens along its local +z; the rim circle sits at local
        // z = height.
        let true_axis = pose.transform_vector(&Vector3::z());
        let angle = result
            .opening_axis
            .normalize()
            .dot(&true_axis)
            .clamp(-1.0, 1.0)
            .acos()
            .to_degrees();
        let rim_center = pose.transform_point(&Point3::new(0.0, 0.0, height));
        let plane_err = result.rim_plane.signed_distance(&rim_center).abs();
        if angle <= 5.0 && plane_err <= 0.002 {
            ok += 1;
        } else {
            eprintln!(
                "  seed {seed}: axis error {angle:.2} deg, rim plane error {:.4} m",
                plane_err
            );
        }
    }
    assert!(ok >= 19, "only {ok}/{n_trials} cups within tolerance");
    pass(2, "randomized cup openings: axis <= 5 deg, rim plane <= 2 mm");
}

// ---------------------------------------------------------------------------
// 3. Support-plane denoising through the full pipeline, with ablation.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_support_plane_denoising_and_ablation() {
    // Cup on a table; the support annulus is coplanar with the rim, the
    // published failure mode for projection-based segmentation.
    let radius = 0.04;
    let height = 0.12;
    let mut cup = sample_cup(radius, height, 12_000, 3);
    cup.labels = Some(vec![1; cup.len()]);
    let mut ring = scenesync::synth::sample_annulus(radius * 1.05, 0.06, height, 8_000, 4);
    ring.labels = Some(vec![2; ring.len()]);
    let scene = cup.concat(&ring);

    let target = Point3::new(0.0, 0.0, height / 2.0);
    let cameras: Vec<PinholeCamera> = [
        Point3::new(0.5, 0.1, 0.45),
        Point3::new(-0.3, 0.45, 0.4),
        Point3::new(0.1, -0.5, 0.5),
    ]
    .into_iter()
    .map(|eye| camera_at(eye, target))
    .collect();
    // Instance masks cover the cup only; the ring leaks in through the
    // mask dilation.
    let cup_idx: Vec<usize> = (0..cup.len()).collect();
    let views = ViewSet::new(
        cameras
            .iter()
            .map(|c| (c.clone(), render_mask(&scene, c, &cup_idx)))
            .collect(),
    )
    .unwrap();

    // Tight plane margin: the support ring is exactly coplanar with the
    // rim, so removal does not need a generous band that would also eat
    // into the cup wall.
    let params = AssetPipelineParams {
        plane_margin: 0.002,
        ..AssetPipelineParams::default()
    };
    let down = voxel_downsample(&scene, params.voxel_size).unwrap();
    let count = |cloud: &PointCloud, label: i64| {
        cloud
            .labels
            .as_ref()
            .map_or(0, |ls| ls.iter().filter(|&&l| l == label).count())
    };
    let (down_cup, down_ring) = (count(&down, 1), count(&down, 2));

    // Ablation: segmentation only, no denoising — the ring leaks through.
    let selected = segment_by_views(&down, &views, params.margin_px, params.vote_fraction).unwrap();
    let ablated = down.select(&selected);
    let leaked = count(&ablated, 2) as f64 / down_ring as f64;
    assert!(
        leaked >= 0.20,
        "ablation leaked only {leaked:.3} of the support ring"
    );

    // Full pipeline: opening-guided support-plane removal cleans it up.
    let object = build_asset_pipeline(&scene, &views, &params).unwrap();
    let kept_cup = count(&object, 1) as f64 / down_cup as f64;
    let kept_ring = count(&object, 2) as f64 / down_ring as f64;
    assert!(kept_cup >= 0.95, "kept only {kept_cup:.3} of the cup");
    assert!(kept_ring <= 0.01, "kept {kept_ring:.3} of the support ring");
    pass(
        3,
        "pipeline keeps >= 95% object / <= 1% table; ablation leaks >= 20%",
    );
}

// ---------------------------------------------------------------------------
// 4. Mask-expansion ablation under noisy extrinsics.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_mask_margin_absorbs_extrinsic_drift() {
    let cup = sample_cup(0.04, 0.1, 6_000, 5);
    let target = Point3::new(0.0, 0.0, 0.05);
    let eyes = [
        Point3::new(0.5, 0.0, 0.3),
        Point3::new(0.2, 0.45, 0.35),
        Point3::new(-0.4, 0.25, 0.3),
        Point3::new(-0.2, -0.45, 0.4),
        Point3::new(0.3, -0.3, 0.5),
    ];
    let all: Vec<usize> = (0..cup.len()).collect();
    let mut views = Vec::new();
    let mut max_drift_px: f64 = 0.0;
    for (i, eye) in eyes.into_iter().enumerate() {
        let camera = camera_at(eye, target);
        // Masks rendered from a slightly wrong extrinsic calibration.
        let mut noisy = camera.clone();
        let jitter = RigidTransform::from_axis_angle(
            &Unit::new_normalize(Vector3::new(0.3, 1.0, 0.2 + i as f64 * 0.1)),
            0.006,
        );
        noisy.t_world_cam = jitter.compose(&camera.t_world_cam);
        // Analytic per-view drift bound: the maximum pixel displacement
        // between the true and the perturbed projection.
        for p in &cup.points {
            if let (Some((u0, v0, _)), Some((u1, v1, _))) =
                (project_point(&camera, p), project_point(&noisy, p))
            {
                max_drift_px = max_drift_px.max(((u0 - u1).powi(2) + (v0 - v1).powi(2)).sqrt());
            }
        }
        views.push((camera, render_mask(&cup, &noisy, &all)));
    }
    let views = ViewSet::new(views).unwrap();

    let recall = |margin: usize| -> f64 {
        segment_by_views(&cup, &views, margin, 1.0).unwrap().len() as f64 / cup.len() as f64
    };
    let strict = recall(0);
    let margin = max_drift_px.ceil() as usize;
    let loose = recall(margin);
    assert!(strict < 0.95, "margin 0 recall {strict:.3}, expected < 0.95");
    assert!(
        loose >= 0.99,
        "margin {margin} recall {loose:.3}, expected >= 0.99"
    );
    pass(
        4,
        "margin 0 recall < 0.95; margin >= drift bound recall >= 0.99",
    );
}

// ---------------------------------------------------------------------------
// 5. Scale calibration recovers the inverse scene scale.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_scale_calibration_recovers_inverse_scale() {
    let cube_size = 0.1;
    let colored = |points: Vec<Point3<f64>>, c: RgbColor| {
        let n = points.len();
        let mut cloud = PointCloud::from_points(points);
        cloud.colors = Some(vec![c; n]);
        cloud
    };
    for s in [0.37, 2.5] {
        // Gray table, gray cup, and the visible green top face of the
        // reference cube; the whole capture uniformly mis-scaled by s.
        let table = colored(
            sample_plane_patch(&Point3::origin(), &Vector3::z(), 0.4, 0.4, 6000, 50).points,
            RgbColor::new(0.55, 0.5, 0.45),
        );
        let cup = colored(
            sample_cup(0.04, 0.1, 4000, 51)
                .points
                .into_iter()
                .map(|p| p + Vector3::new(-0.2, 0.1, 0.0))
                .collect(),
            RgbColor::new(0.6, 0.6, 0.6),
        );
        let face = colored(
            sample_plane_patch(
                &Point3::new(0.2, -0.1, cube_size),
                &Vector3::z(),
                cube_size / 2.0,
                cube_size / 2.0,
                3000,
                52,
            )
            .points,
            RgbColor::new(0.05, 0.95, 0.08),
        );
        let scene = table.concat(&cup).concat(&face).scaled(s);
        let estimate = calibrate_scale(&scene, &GreenThresholds::default(), cube_size).unwrap();
        let expected = 1.0 / s;
        let rel = (estimate.scale_factor - expected).abs() / expected;
        assert!(
            rel < 0.02,
            "scene scale {s}: recovered {} vs {expected} ({rel:.4} relative)",
            estimate.scale_factor
        );
    }
    pass(5, "scenes scaled by 0.37 and 2.5 recovered within 2%");
}

// ---------------------------------------------------------------------------
// 6. Colored ICP resolves symmetries geometric ICP cannot.
// ---------------------------------------------------------------------------

/// Rotation-symmetric cylinder carrying a broad one-sided intensity stripe.
fn striped_cylinder(n: usize, seed: u64) -> PointCloud {
    let mut cloud = sample_cylinder(0.04, 0.12, n, seed);
    let colors = cloud
        .points
        .iter()
        .map(|p| {
            let az = p.y.atan2(p.x);
            let t = az.abs().min(std::f64::consts::FRAC_PI_2).cos();
            RgbColor::new(0.2 + 0.7 * t, 0.2 + 0.7 * t, 0.2 + 0.7 * t)
        })
        .collect();
    cloud.colors = Some(colors);
    cloud
}

fn subsample(cloud: &PointCloud, fraction: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..cloud.len()).filter(|_| rng.gen::<f64>() < fraction).collect();
    cloud.select(&idx)
}

#[test]
fn criterion_06_colored_icp_beats_geometric_on_symmetry() {
    let axial = RigidTransform::from_parts(
        Rotation3::from_axis_angle(&Vector3::z_axis(), 40.0_f64.to_radians()),
        Vector3::zeros(),
    );
    let params = IcpParams::default();
    let (mut geo_fail, mut col_ok) = (0, 0);
    for seed in 0..10 {
        let model = striped_cylinder(7000, 100 + seed);
        let source = axial.apply(&subsample(&model, 0.5, 200 + seed));
        let geo =
            icp_geometric(&source, &model, &RigidTransform::identity(), &params).unwrap();
        let (geo_err, _) = pose_error(&geo.transform, &axial.inverse());
        if geo_err >= 20.0 {
            geo_fail += 1;
        }
        let col = icp_colored(&source, &model, &RigidTransform::identity(), &params).unwrap();
        let (col_err, _) = pose_error(&col.transform, &axial.inverse());
        if col_err <= 2.0 {
            col_ok += 1;
        }
    }
    assert!(geo_fail >= 8, "geometric ICP drifted on only {geo_fail}/10 seeds");
    assert!(col_ok >= 9, "colored ICP accurate on only {col_ok}/10 seeds");

    // Asymmetric object: small perturbations are recovered tightly.
    let mut tight = 0;
    for seed in 0..20u64 {
        let model = box_canonical(5000, 300 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let perturb = RigidTransform::from_parts(
            Rotation3::from_axis_angle(
                &Unit::new_normalize(Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )),
                rng.gen_range(0.02..0.09),
            ),
            Vector3::new(
                rng.gen_range(-0.008..0.008),
                rng.gen_range(-0.008..0.008),
                rng.gen_range(-0.008..0.008),
            ),
        );
        let source = perturb.apply(&subsample(&model, 0.4, 500 + seed));
        let result =
            icp_colored(&source, &model, &RigidTransform::identity(), &params).unwrap();
        let (rot, trans) = pose_error(&result.transform, &perturb.inverse());
        if rot <= 0.5 && trans <= 0.001 {
            tight += 1;
        } else {
            eprintln!("  seed {seed}: {rot:.3} deg / {trans:.5} m");
        }
    }
    assert!(tight >= 19, "tight recovery on only {tight}/20 seeds");
    pass(
        6,
        "geometric ICP drifts on symmetry, colored ICP does not; tight recovery",
    );
}

// ---------------------------------------------------------------------------
// 7. Feature-aware smoothing preserves creases, plain smoothing does not.
// ---------------------------------------------------------------------------

/// Regular grid mesh over each face of an axis-aligned cube with outward
/// orientation.
fn cube_mesh(side: f64, divisions: usize) -> TriangleMesh {
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
    for (axis, level) in [(2, 0), (2, n), (1, 0), (1, n), (0, 0), (0, n)] {
        for i in 0..n {
            for j in 0..n {
                let corner = |di: i64, dj: i64| {
                    let (u, v) = (i + di, j + dj);
                    match axis {
                        0 => (level, u, v),
                        1 => (u, level, v),
                        _ => (u, v, level),
                    }
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
    let center = Vector3::new(side / 2.0, side / 2.0, side / 2.0);
    for f in &mut faces {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let normal = (b - a).cross(&(c - a));
        let mid = (a.coords + b.coords + c.coords) / 3.0;
        if normal.dot(&(mid - center)) < 0.0 {
            f.swap(1, 2);
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Maximum change of any crease dihedral (adjacent-face normal angle that
/// starts near 90 degrees) between `before` and `after`.
fn max_crease_change(before: &TriangleMesh, after: &TriangleMesh) -> f64 {
    let mut edge_faces: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::new();
    for (fi, f) in before.faces.iter().enumerate() {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    let angle = |mesh: &TriangleMesh, f1: usize, f2: usize| -> f64 {
        let n1 = mesh.face_normal(&mesh.faces[f1]).normalize();
        let n2 = mesh.face_normal(&mesh.faces[f2]).normalize();
        n1.dot(&n2).clamp(-1.0, 1.0).acos().to_degrees()
    };
    let mut worst: f64 = 0.0;
    for fs in edge_faces.values() {
        if fs.len() != 2 {
            continue;
        }
        let a0 = angle(before, fs[0], fs[1]);
        if a0 > 45.0 {
            worst = worst.max((angle(after, fs[0], fs[1]) - a0).abs());
        }
    }
    worst
}

#[test]
fn criterion_07_feature_gated_smoothing_preserves_creases() {
    let mesh = cube_mesh(0.1, 10);
    let gated = smooth_feature_aware(
        &mesh,
        &SmoothingParams {
            theta_th_deg: 30.0,
            ..Default::default()
        },
    );
    let uniform = smooth_feature_aware(
        &mesh,
        &SmoothingParams {
            theta_th_deg: 180.0,
            ..Default::default()
        },
    );
    let gated_change = max_crease_change(&mesh, &gated);
    let uniform_change = max_crease_change(&mesh, &uniform);
    assert!(gated_change < 1.0, "gated dihedral change {gated_change:.2} deg");
    assert!(
        uniform_change > 10.0,
        "ungated dihedral change {uniform_change:.2} deg"
    );

    // Flat face with z-noise: RMS halved by smoothing.
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let n = 40usize;
    let mut vertices = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            let noise: f64 = (rng.gen::<f64>() - 0.5) * 0.004;
            vertices.push(Point3::new(i as f64 * 0.01, j as f64 * 0.01, noise));
        }
    }
    let vid = |i: usize, j: usize| i * (n + 1) + j;
    let mut faces = Vec::new();
    for i in 0..n {
        for j in 0..n {
            faces.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
            faces.push([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }
    let noisy = TriangleMesh::new(vertices, faces);
    let rms = |m: &TriangleMesh| {
        (m.vertices.iter().map(|v| v.z * v.z).sum::<f64>() / m.vertices.len() as f64).sqrt()
    };
    let smoothed = smooth_feature_aware(
        &noisy,
        &SmoothingParams {
            theta_th_deg: 30.0,
            ..Default::default()
        },
    );
    let (before, after) = (rms(&noisy), rms(&smoothed));
    assert!(after <= 0.5 * before, "noise RMS {before:.5} -> {after:.5}");
    pass(
        7,
        "creases move < 1 deg gated vs > 10 deg ungated; flat noise halved",
    );
}

// ---------------------------------------------------------------------------
// 8. Tracker closed loop: scripted suites and the paired SR comparison.
// ---------------------------------------------------------------------------

fn eval_params() -> TrackerParams {
    TrackerParams {
        icp: IcpParams {
            lambda_g: 1.0,
            lambda_c: 0.0,
            max_iters: 10,
            pyramid: vec![0.012, 0.006],
            ..IcpParams::default()
        },
        ..TrackerParams::default()
    }
}

/// The object follows `pose_at(alpha)` while the waypoint sits fixed;
/// observed one-sided.
fn scripted_trial(
    canonical: &PointCloud,
    label: i64,
    pose_at: impl Fn(f64) -> RigidTransform,
    waypoint: Point3<f64>,
    n_frames: usize,
) -> AvoidanceTrial {
    let mut frames = Vec::new();
    let mut path = Vec::new();
    let mut true_obstacles = Vec::new();
    for i in 0..n_frames {
        let alpha = i as f64 / (n_frames - 1) as f64;
        let pose = pose_at(alpha);
        frames.push(make_frame(i as f64 * 0.1, &[(label, canonical, pose.clone())], true));
        path.push(waypoint);
        true_obstacles.push(vec![pose.apply(canonical)]);
    }
    AvoidanceTrial {
        frames,
        path,
        true_obstacles,
    }
}

#[test]
fn criterion_08_tracker_closed_loop() {
    let canonical = box_canonical(1500, 80);
    let bank = bank_with(7, &canonical);
    let params = TrackerParams::default();

    // Self-rotation: 90 degrees over 30 frames at a fixed offset.
    let offset = Vector3::new(0.25, -0.1, 0.05);
    let mut state = SyncState::new();
    for i in 0..30 {
        let angle = 90.0_f64.to_radians() * i as f64 / 29.0;
        let pose = RigidTransform::from_parts(
            Rotation3::from_axis_angle(&Vector3::z_axis(), angle),
            offset,
        );
        let frame = make_frame(i as f64 * 0.1, &[(7, &canonical, pose.clone())], false);
        let updates = state.step(&frame, &bank, &params).unwrap();
        assert_eq!(updates[0].status, TrackStatus::Tracked);
        let (rot, trans) = pose_error(&updates[0].pose, &pose);
        assert!(rot <= 2.0 && trans <= 0.003, "self-rot frame {i}: {rot:.2} deg / {trans:.4} m");
    }

    // Enter-trajectory: translation ramp into the workspace.
    let mut state = SyncState::new();
    for i in 0..20 {
        let alpha = i as f64 / 19.0;
        let pose =
            RigidTransform::from_translation(Vector3::new(-0.3 + 0.35 * alpha, 0.05, 0.05));
        let frame = make_frame(i as f64 * 0.1, &[(7, &canonical, pose.clone())], false);
        let updates = state.step(&frame, &bank, &params).unwrap();
        assert_eq!(updates[0].status, TrackStatus::Tracked);
        let (rot, trans) = pose_error(&updates[0].pose, &pose);
        assert!(rot <= 2.0 && trans <= 0.003, "enter-traj frame {i}: {rot:.2} deg / {trans:.4} m");
    }

    // Occlusion: blackout, object shifts, reacquire within tolerance.
    let mut state = SyncState::new();
    let pose0 = RigidTransform::from_translation(offset);
    for i in 0..4 {
        let frame = make_frame(i as f64 * 0.1, &[(7, &canonical, pose0.clone())], false);
        state.step(&frame, &bank, &params).unwrap();
    }
    for i in 4..8 {
        let frame = make_frame(i as f64 * 0.1, &[], false);
        let updates = state.step(&frame, &bank, &params).unwrap();
        assert_eq!(updates[0].status, TrackStatus::Occluded);
    }
    let shifted = RigidTransform::from_parts(
        Rotation3::from_axis_angle(&Vector3::z_axis(), 5.0_f64.to_radians()),
        offset + Vector3::new(0.008, -0.005, 0.0),
    );
    let frame = make_frame(0.8, &[(7, &canonical, shifted.clone())], false);
    let updates = state.step(&frame, &bank, &params).unwrap();
    assert_eq!(updates[0].status, TrackStatus::Tracked);
    let (rot, trans) = pose_error(&updates[0].pose, &shifted);
    assert!(rot <= 3.0 && trans <= 0.003, "reacquired at {rot:.2} deg / {trans:.4} m");

    // Paired seen-vs-unseen avoidance: completion from the bank must not
    // be worse than hull-only tracking of the partial view.
    let eval = eval_params();
    let waypoint = Point3::new(0.30, 0.0, 0.10);
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut trials = Vec::new();
    for t in 0..8 {
        let lateral = rng.gen_range(-0.08..0.08);
        let spin = if t % 2 == 0 { 90.0_f64.to_radians() } else { 0.0 };
        let start = if t % 2 == 0 {
            waypoint.coords + Vector3::new(0.0, lateral, 0.0)
        } else {
            waypoint.coords + Vector3::new(-0.2, lateral, 0.0)
        };
        let end = waypoint.coords + Vector3::new(0.0, lateral, 0.0);
        trials.push(scripted_trial(
            &canonical,
            7,
            move |alpha| {
                RigidTransform::from_parts(
                    Rotation3::from_axis_angle(&Vector3::z_axis(), spin * alpha),
                    start + (end - start) * alpha,
                )
            },
            waypoint,
            11,
        ));
    }
    let (seen_tally, _) = run_avoidance_eval(&trials, &bank, &eval, true).unwrap();
    let empty = MemoryBank::new();
    let (unseen_tally, _) = run_avoidance_eval(&trials, &empty, &eval, true).unwrap();
    let sr_seen = success_rate(&seen_tally).unwrap();
    let sr_unseen = success_rate(&unseen_tally).unwrap();
    assert!(
        sr_seen >= sr_unseen,
        "SR(seen) {sr_seen:.1} < SR(unseen) {sr_unseen:.1}"
    );
    pass(
        8,
        "scripted suites within 2 deg/3 mm, reacquisition ok, SR(seen) >= SR(unseen)",
    );
}

// ---------------------------------------------------------------------------
// 9. Completion coverage from a single view.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_completion_restores_coverage() {
    let canonical = box_canonical(2000, 90);
    let bank = bank_with(7, &canonical);
    let params = TrackerParams::default();
    let target = RigidTransform::from_parts(
        Rotation3::from_axis_angle(&Vector3::z_axis(), 0.4),
        Vector3::new(0.2, 0.1, 0.05),
    );
    // Ramp the pose so every step warm-starts from the previous frame.
    let mut state = SyncState::new();
    for i in 0..6 {
        let alpha = i as f64 / 5.0;
        let pose = RigidTransform::from_parts(
            Rotation3::from_axis_angle(&Vector3::z_axis(), 0.4 * alpha),
            Vector3::new(0.2 * alpha, 0.1 * alpha, 0.05 * alpha),
        );
        let frame = make_frame(i as f64 * 0.1, &[(7, &canonical, pose)], true);
        state.step(&frame, &bank, &params).unwrap();
    }
    let track = state.track(7).unwrap();
    assert_eq!(track.status, TrackStatus::Tracked);

    // Independent dense reference of the posed object.
    let reference = target.apply(&box_canonical(3000, 91));
    let partial = state
        .window()
        .last()
        .unwrap()
        .partial_for(7);
    let before = coverage(&reference, &partial, 0.008);
    let completed = complete_object(track, &bank).unwrap();
    let after = coverage(&reference, &completed, 0.008);
    assert!(before <= 0.60, "partial coverage {before:.3}, expected <= 0.60");
    assert!(after >= 0.99, "completed coverage {after:.3}, expected >= 0.99");
    pass(9, "single-view coverage <= 60% raised to >= 99% by completion");
}

// ---------------------------------------------------------------------------
// 10. Randomized invariant suites (fixed-seed property testing).
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_randomized_invariants() {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

    let cases = 256;
    let runner = |seed: u8| {
        TestRunner::new_with_rng(
            Config {
                cases,
                failure_persistence: None,
                ..Config::default()
            },
            TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]),
        )
    };

    let point = || {
        (-0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64)
            .prop_map(|(x, y, z)| Point3::new(x, y, z))
    };
    let cloud = |min: usize, max: usize| {
        proptest::collection::vec(point(), min..max)
            .prop_map(PointCloud::from_points)
    };

    // Voxel downsampling is idempotent and anchored: output voxels are
    // unique and every representative came from the input.
    runner(1)
        .run(&(cloud(1, 120), 0.01..0.2f64), |(cloud, voxel)| {
            let once = voxel_downsample(&cloud, voxel).unwrap();
            let twice = voxel_downsample(&once, voxel).unwrap();
            prop_assert_eq!(once.len(), twice.len());
            prop_assert!(once.len() <= cloud.len());
            // Each representative is a per-voxel centroid, so it stays
            // within one voxel diagonal of some input point.
            let reach = voxel * 3.0f64.sqrt();
            for p in &once.points {
                prop_assert!(cloud.points.iter().any(|q| (p - q).norm() <= reach));
            }
            Ok(())
        })
        .unwrap();

    // Rigid transforms: matrix round trip, composition with the inverse,
    // and quaternion round trip are exact to tolerance.
    let transform = (
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        0.0..std::f64::consts::PI,
        (-0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64),
    )
        .prop_filter_map("axis must be nonzero", |(axis, angle, t)| {
            let v = Vector3::new(axis.0, axis.1, axis.2);
            (v.norm() > 1e-3).then(|| {
                RigidTransform::from_parts(
                    Rotation3::from_axis_angle(&Unit::new_normalize(v), angle),
                    Vector3::new(t.0, t.1, t.2),
                )
            })
        });
    runner(2)
        .run(&(transform, point()), |(t, p)| {
            let back = RigidTransform::from_matrix(&t.matrix(), 1e-9).unwrap();
            prop_assert!(t.rotation_angle_to(&back) < 1e-6);
            prop_assert!(t.translation_distance_to(&back) < 1e-9);
            let roundtrip = t.inverse().transform_point(&t.transform_point(&p));
            prop_assert!((roundtrip - p).norm() < 1e-9);
            let q = QuatWxyz::from_transform(&t).to_transform().unwrap();
            prop_assert!(t.rotation_angle_to(&q) < 1e-6);
            Ok(())
        })
        .unwrap();

    // Success rate: bounded, exact weighting, monotone in outcome quality.
    runner(3)
        .run(&(0usize..500, 0usize..500, 0usize..500), |(fa, ea, co)| {
            let n = fa + ea + co;
            prop_assume!(n > 0);
            let sr = success_rate(&AvoidanceTally::new(fa, ea, co)).unwrap();
            prop_assert!((0.0..=100.0).contains(&sr));
            let exact = (fa as f64 + 0.8 * ea as f64) / n as f64 * 100.0;
            prop_assert!((sr - exact).abs() < 1e-12);
            if co > 0 {
                let better =
                    success_rate(&AvoidanceTally::new(fa + 1, ea, co - 1)).unwrap();
                prop_assert!(better > sr);
            }
            Ok(())
        })
        .unwrap();

    // Convex hull contains every input point (non-positive signed
    // outside distance up to tolerance).
    runner(4)
        .run(&cloud(12, 60), |cloud| {
            // Guarantee a full-dimensional input.
            let mut cloud = cloud;
            cloud.points.push(Point3::new(0.6, 0.0, 0.0));
            cloud.points.push(Point3::new(0.0, 0.6, 0.0));
            cloud.points.push(Point3::new(0.0, 0.0, 0.6));
            cloud.points.push(Point3::new(-0.6, -0.6, -0.6));
            let hull = convex_hull(&cloud).unwrap();
            for p in &cloud.points {
                prop_assert!(hull_outside_distance(&hull, p) <= 1e-9);
            }
            Ok(())
        })
        .unwrap();

    // PLY round trip preserves geometry to writer precision.
    runner(5)
        .run(&cloud(1, 50), |cloud| {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("roundtrip.ply");
            scenesync::io::write_ply(&cloud, &path, true).unwrap();
            let back = scenesync::io::read_ply(&path).unwrap();
            prop_assert_eq!(back.len(), cloud.len());
            for (p, q) in cloud.points.iter().zip(&back.points) {
                prop_assert!((p - q).norm() < 1e-5);
            }
            Ok(())
        })
        .unwrap();

    // Concatenation is length-additive and keeps shared attributes only.
    runner(6)
        .run(&(cloud(0, 40), cloud(0, 40)), |(a, b)| {
            let c = a.concat(&b);
            prop_assert_eq!(c.len(), a.len() + b.len());
            prop_assert!(c.labels.is_none());
            Ok(())
        })
        .unwrap();

    pass(10, "six invariant families hold over 256 fixed-seed cases each");
}
