//! Command-line front end for the asset-construction (stage 1) and online
//! synchronization (stage 2) pipelines, plus a synthetic scene generator
//! and a micro-benchmark.
//!
//! Conventions: point clouds are PLY, meshes OBJ, masks P5 PGM, and every
//! report is JSON. All reports are byte-reproducible for a fixed `--seed`;
//! wall-clock timings live in a separate `timings` section that is
//! explicitly excluded from that guarantee.
//!
//! Exit codes: 0 success, 2 configuration/argument validation failure,
//! 3 pipeline failure.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use scenesync::error::{Error, Result};
use scenesync::geom::{PointCloud, QuatWxyz, RigidTransform};
use scenesync::io::{
    read_pgm_mask, read_ply, read_pose_file, write_obj, write_pgm_mask, write_ply,
    write_pose_file, Intrinsics, PoseFile, PoseFrame,
};
use scenesync::mesh::{
    canonicalize_asset, decimate, reconstruct_mesh, smooth_feature_aware, ReconstructParams,
    SmoothingParams,
};
use scenesync::nn::NnIndex;
use scenesync::opening::{detect_opening, OpeningParams};
use scenesync::projseg::{build_asset_pipeline, segment_by_views, AssetPipelineParams, PinholeCamera, ViewSet};
use scenesync::register::{icp_colored, icp_geometric};
use scenesync::scalecal::{
    apply_scale, calibrate_scale, detect_green, estimate_cube_edges, scale_factor,
    GreenThresholds, ScaleEstimate,
};
use scenesync::synth::{
    sample_scene, sample_scene_parts, scripted_motion, FrameSample, Keyframe, PoseSpec, SceneSpec,
};
use scenesync::tracker::{
    complete_object, run_avoidance_eval, success_rate, AssetRecord, AvoidanceOutcome,
    AvoidanceTally, AvoidanceTrial, MemoryBank, SyncState, TrackStatus, TrackerParams,
};

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct Stage1Config {
    pipeline: AssetPipelineParams,
    green: GreenThresholds,
    /// Physical edge length of the reference cube, meters.
    cube_size_m: f64,
    reconstruct: ReconstructParams,
    smoothing: SmoothingParams,
    /// Target face fraction kept by decimation.
    decimate_fraction: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            pipeline: AssetPipelineParams::default(),
            green: GreenThresholds::default(),
            cube_size_m: 0.1,
            reconstruct: ReconstructParams::default(),
            smoothing: SmoothingParams::default(),
            decimate_fraction: 0.4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct Stage2Config {
    tracker: TrackerParams,
    /// Avoidance trials per suite in `stage2`.
    trials: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            tracker: TrackerParams::default(),
            trials: 20,
        }
    }
}

/// Full pipeline configuration; every field has a built-in default so a
/// config file only needs the overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct PipelineConfig {
    seed: u64,
    stage1: Stage1Config,
    stage2: Stage2Config,
}

impl PipelineConfig {
    fn load(path: Option<&Path>, seed_override: Option<u64>) -> Result<Self> {
        let mut config: PipelineConfig = match path {
            Some(p) => serde_json::from_reader(std::io::BufReader::new(File::open(p)?))?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    /// Eager validation: every violation is collected and reported in one
    /// message rather than failing on the first.
    fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        let s1 = &self.stage1;
        if !(s1.pipeline.voxel_size > 0.0) {
            violations.push(format!(
                "stage1.pipeline.voxel_size must be positive, got {}",
                s1.pipeline.voxel_size
            ));
        }
        if !(s1.pipeline.vote_fraction > 0.0 && s1.pipeline.vote_fraction <= 1.0) {
            violations.push(format!(
                "stage1.pipeline.vote_fraction must be in (0, 1], got {}",
                s1.pipeline.vote_fraction
            ));
        }
        if s1.pipeline.opening_k < 16 {
            violations.push(format!(
                "stage1.pipeline.opening_k must be at least 16, got {}",
                s1.pipeline.opening_k
            ));
        }
        if s1.pipeline.plane_margin < 0.0 {
            violations.push(format!(
                "stage1.pipeline.plane_margin must be non-negative, got {}",
                s1.pipeline.plane_margin
            ));
        }
        if s1.pipeline.outlier_k == 0 {
            violations.push("stage1.pipeline.outlier_k must be at least 1".into());
        }
        if !(s1.pipeline.outlier_std_ratio > 0.0) {
            violations.push(format!(
                "stage1.pipeline.outlier_std_ratio must be positive, got {}",
                s1.pipeline.outlier_std_ratio
            ));
        }
        if !(s1.cube_size_m > 0.0) {
            violations.push(format!(
                "stage1.cube_size_m must be positive, got {}",
                s1.cube_size_m
            ));
        }
        if s1.reconstruct.radius_factors.is_empty()
            || s1.reconstruct.radius_factors.iter().any(|&f| !(f > 0.0))
        {
            violations.push("stage1.reconstruct.radius_factors must be positive".into());
        }
        if s1.reconstruct.normal_k < 3 {
            violations.push(format!(
                "stage1.reconstruct.normal_k must be at least 3, got {}",
                s1.reconstruct.normal_k
            ));
        }
        if !(s1.smoothing.lambda > 0.0 && s1.smoothing.lambda < 1.0) {
            violations.push(format!(
                "stage1.smoothing.lambda must be in (0, 1), got {}",
                s1.smoothing.lambda
            ));
        }
        if s1.smoothing.theta_th_deg < 0.0 {
            violations.push(format!(
                "stage1.smoothing.theta_th_deg must be non-negative, got {}",
                s1.smoothing.theta_th_deg
            ));
        }
        if !(s1.decimate_fraction > 0.0 && s1.decimate_fraction <= 1.0) {
            violations.push(format!(
                "stage1.decimate_fraction must be in (0, 1], got {}",
                s1.decimate_fraction
            ));
        }
        if let Err(e) = self.stage2.tracker.validate() {
            violations.push(format!("stage2.tracker: {e}"));
        }
        if self.stage2.trials == 0 {
            violations.push("stage2.trials must be at least 1".into());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::ValidationError(format!(
                "{} configuration violation(s):\n  - {}",
                violations.len(),
                violations.join("\n  - ")
            )))
        }
    }
}

// ---------------------------------------------------------------------------
// CLI surface.
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "scenesync",
    version,
    about = "Point-cloud asset construction and online scene synchronization"
)]
struct Cli {
    /// JSON pipeline configuration (all fields optional; defaults built in).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: clouds, masks, camera poses, frames.
    Synth(SynthArgs),
    /// Multi-view mask-projection segmentation of one labeled object.
    Segment(SegmentArgs),
    /// Sphere-expansion opening detection on an object cloud.
    DetectOpening(DetectOpeningArgs),
    /// Metric-scale calibration from the green reference cube.
    CalibrateScale(CalibrateScaleArgs),
    /// Surface reconstruction, feature-aware smoothing, and decimation.
    Meshify(MeshifyArgs),
    /// Colored (or geometric) ICP between two clouds.
    Register(RegisterArgs),
    /// Full stage-1 pipeline: scene → segmented, meshed, banked assets.
    Stage1(Stage1Args),
    /// Track banked objects through a frame stream.
    Track(TrackArgs),
    /// Stage-2 evaluation: tracking plus the scripted avoidance suites.
    Stage2(Stage2Args),
    /// Weighted success rate from an FA,EA,CO tally.
    EvalSr(EvalSrArgs),
    /// Wall-clock micro-benchmark of the core pipeline operations.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene specification JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Number of rendered frames.
    #[arg(long, default_value_t = 12)]
    frames: usize,
    /// Sampling density, points per square meter.
    #[arg(long, default_value_t = 200_000.0)]
    density: f64,
    /// Point splat radius in pixels.
    #[arg(long, default_value_t = 1)]
    splat_px: usize,
    /// Keyframe trajectory JSON; switches from camera orbit to scripted
    /// object motion under a fixed camera.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Orbit camera distance from the scene center, meters.
    #[arg(long, default_value_t = 0.9)]
    orbit_radius: f64,
    /// Orbit camera elevation, degrees.
    #[arg(long, default_value_t = 40.0)]
    orbit_elevation_deg: f64,
    /// Seconds between frames.
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
}

#[derive(Args)]
struct SegmentArgs {
    /// Scene point cloud (PLY).
    #[arg(long)]
    cloud: PathBuf,
    /// Camera pose sidecar JSON.
    #[arg(long)]
    poses: PathBuf,
    /// Directory containing `<image_name>_label<L>.pgm` masks.
    #[arg(long)]
    masks: PathBuf,
    /// Object label to segment.
    #[arg(long)]
    label: i64,
    /// Output object cloud (PLY).
    #[arg(long)]
    out: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Mask dilation override in pixels.
    #[arg(long)]
    margin_px: Option<usize>,
}

#[derive(Args)]
struct DetectOpeningArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Direction count override.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct CalibrateScaleArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Reference cube edge length override, meters.
    #[arg(long)]
    cube_size: Option<f64>,
    /// Write the rescaled cloud here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct MeshifyArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Output mesh (OBJ).
    #[arg(long)]
    out: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Decimation face-fraction override.
    #[arg(long)]
    decimate_fraction: Option<f64>,
    /// Feature-angle threshold override, degrees.
    #[arg(long)]
    theta_th: Option<f64>,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Drop the photometric term.
    #[arg(long)]
    geometric: bool,
}

#[derive(Args)]
struct Stage1Args {
    /// Scene directory produced by `synth` (scene.ply, poses.json, masks).
    #[arg(long)]
    scene: PathBuf,
    /// Comma-separated object labels to extract.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<i64>,
    /// Memory-bank output directory.
    #[arg(long)]
    bank: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Calibrate metric scale from the green reference cube first.
    #[arg(long)]
    calibrate_scale: bool,
}

#[derive(Args)]
struct TrackArgs {
    /// Frame-stream directory produced by `synth --trajectory`.
    #[arg(long)]
    frames: PathBuf,
    /// Memory-bank directory produced by `stage1`.
    #[arg(long)]
    bank: PathBuf,
    /// JSONL report: one record per frame per track.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct Stage2Args {
    /// Memory-bank directory; the avoidance suites use its first asset.
    #[arg(long)]
    bank: PathBuf,
    /// Optional frame stream to track (tracks.jsonl next to the report).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct EvalSrArgs {
    /// Outcome tally as `FA,EA,CO` counts.
    #[arg(long)]
    tally: String,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// Repetitions per operation.
    #[arg(long, default_value_t = 2)]
    repeat: usize,
}

// ---------------------------------------------------------------------------
// Entry point and shared plumbing.
// ---------------------------------------------------------------------------

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprint!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprint!(": {s}");
                source = s.source();
            }
            eprintln!();
            exit_code(&e)
        }
    });
}

/// 2 for configuration/argument problems, 3 for pipeline failures.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_)
        | Error::ValidationError(_)
        | Error::ParseError { .. }
        | Error::UnsupportedFormat(_)
        | Error::EmptyInput(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = PipelineConfig::load(cli.config.as_deref(), cli.seed)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::InvalidParameter(
            "no subcommand given (see --help)".into(),
        ));
    };
    match command {
        Command::Synth(args) => cmd_synth(&config, &args),
        Command::Segment(args) => cmd_segment(&config, &args),
        Command::DetectOpening(args) => cmd_detect_opening(&config, &args),
        Command::CalibrateScale(args) => cmd_calibrate_scale(&config, &args),
        Command::Meshify(args) => cmd_meshify(&config, &args),
        Command::Register(args) => cmd_register(&config, &args),
        Command::Stage1(args) => cmd_stage1(&config, &args),
        Command::Track(args) => cmd_track(&config, &args),
        Command::Stage2(args) => cmd_stage2(&config, &args),
        Command::EvalSr(args) => cmd_eval_sr(&args),
        Command::Bench(args) => cmd_bench(&config, &args),
    }
}

fn write_json_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

fn matrix_rows(t: &RigidTransform) -> [[f64; 4]; 4] {
    let m = t.matrix();
    let mut rows = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            rows[r][c] = m[(r, c)];
        }
    }
    rows
}

fn timed<T>(
    timings: &mut BTreeMap<String, f64>,
    name: &str,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
    Ok(out)
}

/// Camera axes: +x right, +y down, +z forward (into the scene), world up +z.
fn look_at(eye: Point3<f64>, target: Point3<f64>) -> RigidTransform {
    let forward = (target - eye).normalize();
    let up_hint = if forward.z.abs() > 0.99 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let right = forward.cross(&up_hint).normalize();
    let down = forward.cross(&right);
    let rot = Matrix3::from_columns(&[right, down, forward]);
    RigidTransform::from_parts(Rotation3::from_matrix_unchecked(rot), eye.coords)
}

fn default_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 580.0,
        fy: 580.0,
        cx: 319.5,
        cy: 239.5,
    }
}

fn camera_from(intr: &Intrinsics, t_world_cam: RigidTransform) -> PinholeCamera {
    PinholeCamera {
        fx: intr.fx,
        fy: intr.fy,
        cx: intr.cx,
        cy: intr.cy,
        width: 640,
        height: 480,
        t_world_cam,
    }
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:04}")
}

fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let spec: SceneSpec = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Frame-stream sidecar (motion mode).
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FrameStreamJson {
    intrinsics: Intrinsics,
    t_world_cam: [[f64; 4]; 4],
    frames: Vec<FrameJson>,
}

#[derive(Serialize, Deserialize)]
struct FrameJson {
    timestamp: f64,
    /// Label → partial-cloud PLY file name.
    partials: BTreeMap<i64, String>,
    /// Label → ground-truth world pose (row-major 4×4), when known.
    true_poses: BTreeMap<i64, [[f64; 4]; 4]>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryJson {
    times: Vec<f64>,
    keyframes: Vec<KeyframeJson>,
}

#[derive(Serialize, Deserialize)]
struct KeyframeJson {
    time: f64,
    label: i64,
    pose: PoseSpec,
}

fn rows_to_transform(rows: &[[f64; 4]; 4]) -> Result<RigidTransform> {
    let mut m = nalgebra::Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            m[(r, c)] = rows[r][c];
        }
    }
    RigidTransform::from_matrix(&m, 1e-6)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(_config: &PipelineConfig, args: &SynthArgs) -> Result<()> {
    if args.frames == 0 {
        return Err(Error::InvalidParameter("--frames must be at least 1".into()));
    }
    let spec = read_scene_spec(&args.spec)?;
    fs::create_dir_all(&args.out)?;
    match &args.trajectory {
        None => synth_orbit(&spec, args),
        Some(traj) => synth_motion(&spec, args, traj),
    }
}

/// Static scene, orbiting camera: stage-1 input (scene.ply, per-label
/// ground truth, per-frame masks, poses.json).
fn synth_orbit(spec: &SceneSpec, args: &SynthArgs) -> Result<()> {
    let cloud = sample_scene(spec, args.density)?;
    write_ply(&cloud, &args.out.join("scene.ply"), true)?;
    for obj in &spec.objects {
        let labels = cloud.labels.as_ref().expect("synthetic scenes are labeled");
        let idx: Vec<usize> = (0..cloud.len()).filter(|&i| labels[i] == obj.label).collect();
        write_ply(
            &cloud.select(&idx),
            &args.out.join(format!("scene_label{}.ply", obj.label)),
            true,
        )?;
    }

    let center = cloud.centroid().ok_or(Error::EmptyInput("scene sampled no points"))?;
    let intr = default_intrinsics();
    let elevation = args.orbit_elevation_deg.to_radians();
    let mut pose_frames = Vec::new();
    let poses: BTreeMap<i64, RigidTransform> = spec
        .objects
        .iter()
        .map(|o| Ok((o.label, o.pose.to_transform()?)))
        .collect::<Result<_>>()?;
    for i in 0..args.frames {
        let az = 2.0 * std::f64::consts::PI * i as f64 / args.frames as f64;
        let eye = center
            + Vector3::new(
                args.orbit_radius * elevation.cos() * az.cos(),
                args.orbit_radius * elevation.cos() * az.sin(),
                args.orbit_radius * elevation.sin(),
            );
        let camera = camera_from(&intr, look_at(eye, center));
        let frame = scenesync::synth::render_frame(
            &cloud,
            &camera,
            i as f64 * args.dt,
            poses.clone(),
            args.splat_px,
        )?;
        for (label, mask) in &frame.masks {
            write_pgm_mask(
                mask,
                &args.out.join(format!("{}_label{label}.pgm", frame_name(i))),
            )?;
        }
        pose_frames.push(PoseFrame {
            image_name: frame_name(i),
            t_world_cam: camera.t_world_cam,
        });
    }
    write_pose_file(
        &PoseFile {
            intrinsics: intr,
            frames: pose_frames,
        },
        &args.out.join("poses.json"),
    )?;
    println!(
        "wrote {} points, {} views to {}",
        cloud.len(),
        args.frames,
        args.out.display()
    );
    Ok(())
}

/// Scripted object motion under a fixed camera: stage-2 input
/// (frames.json + per-frame per-label partial clouds).
fn synth_motion(spec: &SceneSpec, args: &SynthArgs, traj_path: &Path) -> Result<()> {
    let traj: TrajectoryJson =
        serde_json::from_reader(std::io::BufReader::new(File::open(traj_path)?))?;
    let keyframes: Vec<Keyframe> = traj
        .keyframes
        .iter()
        .map(|k| {
            Ok(Keyframe {
                time: k.time,
                label: k.label,
                pose: k.pose.to_transform()?,
            })
        })
        .collect::<Result<_>>()?;
    let times: Vec<f64> = if traj.times.is_empty() {
        (0..args.frames).map(|i| i as f64 * args.dt).collect()
    } else {
        traj.times.clone()
    };

    let intr = default_intrinsics();
    let center = Point3::new(0.0, 0.0, 0.0);
    let eye = center
        + Vector3::new(
            args.orbit_radius * args.orbit_elevation_deg.to_radians().cos(),
            0.0,
            args.orbit_radius * args.orbit_elevation_deg.to_radians().sin(),
        );
    let camera = camera_from(&intr, look_at(eye, center));
    let stream = scripted_motion(spec, args.density, &keyframes, &times, &camera, args.splat_px)?;

    let mut frames_json = Vec::new();
    for (i, frame) in stream.enumerate() {
        let mut partials = BTreeMap::new();
        let mut true_poses = BTreeMap::new();
        for (&label, pose) in &frame.true_poses {
            let partial = frame.partial_for(label);
            if partial.is_empty() {
                continue;
            }
            let name = format!("{}_label{label}.ply", frame_name(i));
            write_ply(&partial, &args.out.join(&name), true)?;
            partials.insert(label, name);
            true_poses.insert(label, matrix_rows(pose));
        }
        frames_json.push(FrameJson {
            timestamp: frame.timestamp,
            partials,
            true_poses,
        });
    }
    let n = frames_json.len();
    write_json_report(
        &args.out.join("frames.json"),
        &FrameStreamJson {
            intrinsics: intr,
            t_world_cam: matrix_rows(&camera.t_world_cam),
            frames: frames_json,
        },
    )?;
    println!("wrote {n} frames to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// segment / detect-opening / calibrate-scale / meshify / register
// ---------------------------------------------------------------------------

fn load_view_set(poses: &Path, masks_dir: &Path, label: i64) -> Result<ViewSet> {
    let pose_file = read_pose_file(poses)?;
    let mut views = Vec::new();
    for frame in &pose_file.frames {
        let mask_path = masks_dir.join(format!("{}_label{label}.pgm", frame.image_name));
        if !mask_path.exists() {
            return Err(Error::ValidationError(format!(
                "missing mask for view '{}' label {label}: expected {}",
                frame.image_name,
                mask_path.display()
            )));
        }
        let mask = read_pgm_mask(&mask_path)?;
        views.push((
            PinholeCamera {
                fx: pose_file.intrinsics.fx,
                fy: pose_file.intrinsics.fy,
                cx: pose_file.intrinsics.cx,
                cy: pose_file.intrinsics.cy,
                width: mask.width,
                height: mask.height,
                t_world_cam: frame.t_world_cam,
            },
            mask,
        ));
    }
    ViewSet::new(views)
}

#[derive(Serialize)]
struct SegmentReport {
    label: i64,
    input_points: usize,
    downsampled_points: usize,
    selected_points: usize,
    views: usize,
}

fn cmd_segment(config: &PipelineConfig, args: &SegmentArgs) -> Result<()> {
    let params = &config.stage1.pipeline;
    let cloud = read_ply(&args.cloud)?;
    let views = load_view_set(&args.poses, &args.masks, args.label)?;
    let down = scenesync::filter::voxel_downsample(&cloud, params.voxel_size)?;
    let margin = args.margin_px.unwrap_or(params.margin_px);
    let selected = segment_by_views(&down, &views, margin, params.vote_fraction)?;
    if selected.is_empty() {
        return Err(Error::EmptySegmentation);
    }
    let object = down.select(&selected);
    write_ply(&object, &args.out, true)?;
    if let Some(report) = &args.report {
        write_json_report(
            report,
            &SegmentReport {
                label: args.label,
                input_points: cloud.len(),
                downsampled_points: down.len(),
                selected_points: object.len(),
                views: views.views.len(),
            },
        )?;
    }
    println!("segmented {} of {} points", object.len(), down.len());
    Ok(())
}

#[derive(Serialize)]
struct OpeningReport {
    converged: bool,
    iterations: usize,
    opening_axis: [f64; 3],
    rim_plane_normal: [f64; 3],
    rim_plane_offset: f64,
    rim_points: usize,
}

fn cmd_detect_opening(config: &PipelineConfig, args: &DetectOpeningArgs) -> Result<()> {
    let cloud = read_ply(&args.cloud)?;
    let params = OpeningParams {
        k: args.k.unwrap_or(config.stage1.pipeline.opening_k),
        ..OpeningParams::default()
    };
    let result = detect_opening(&cloud, &params)?;
    write_json_report(
        &args.report,
        &OpeningReport {
            converged: result.converged,
            iterations: result.iterations,
            opening_axis: result.opening_axis.into(),
            rim_plane_normal: result.rim_plane.normal.into(),
            rim_plane_offset: result.rim_plane.offset,
            rim_points: result.rim_points.len(),
        },
    )?;
    println!(
        "opening {} after {} iterations",
        if result.converged { "found" } else { "not found" },
        result.iterations
    );
    Ok(())
}

/// Scale calibration robust to fully-sampled reference cubes: the edge is
/// measured on the *top face* of the detected green cluster. A real capture
/// sees only visible surfaces, but synthetic scenes sample the closed cube,
/// whose silhouette bounding box overestimates the edge.
fn calibrate_scale_top_face(
    cloud: &PointCloud,
    green: &GreenThresholds,
    cube_size_m: f64,
) -> Result<ScaleEstimate> {
    let detection = detect_green(cloud, green)?;
    let greens = cloud.select(&detection.indices);
    let zmax = greens
        .points
        .iter()
        .fold(f64::NEG_INFINITY, |hi, p| hi.max(p.z));
    // Tight slab: wider slabs admit side-wall strips whose extreme x/y
    // coordinates bias the percentile edge estimator. Captures with depth
    // noise would need this widened (and the estimator made plane-relative).
    let tol = 1e-4;
    let idx: Vec<usize> = (0..greens.len())
        .filter(|&i| greens.points[i].z >= zmax - tol)
        .collect();
    let top = greens.select(&idx);
    if top.len() >= 50 {
        let edges = estimate_cube_edges(&top)?;
        scale_factor(&edges, cube_size_m)
    } else {
        // Too sparse to isolate a face; fall back to the full cluster.
        calibrate_scale(cloud, green, cube_size_m)
    }
}

fn cmd_calibrate_scale(config: &PipelineConfig, args: &CalibrateScaleArgs) -> Result<()> {
    let cloud = read_ply(&args.cloud)?;
    let cube = args.cube_size.unwrap_or(config.stage1.cube_size_m);
    let estimate = calibrate_scale_top_face(&cloud, &config.stage1.green, cube)?;
    if let Some(out) = &args.out {
        write_ply(&apply_scale(&cloud, &estimate), out, true)?;
    }
    write_json_report(&args.report, &estimate)?;
    println!("scale factor {:.6}", estimate.scale_factor);
    Ok(())
}

#[derive(Serialize)]
struct MeshifyReport {
    input_points: usize,
    raw_vertices: usize,
    raw_faces: usize,
    final_vertices: usize,
    final_faces: usize,
    boundary_edges: usize,
}

fn meshify_cloud(
    cloud: &PointCloud,
    s1: &Stage1Config,
    decimate_fraction: f64,
    theta_th: f64,
) -> Result<(scenesync::mesh::TriangleMesh, MeshifyReport)> {
    let raw = reconstruct_mesh(cloud, &s1.reconstruct)?;
    let smoothing = SmoothingParams {
        theta_th_deg: theta_th,
        ..s1.smoothing.clone()
    };
    let smooth = smooth_feature_aware(&raw, &smoothing);
    let mesh = decimate(&smooth, decimate_fraction, theta_th)?;
    let report = MeshifyReport {
        input_points: cloud.len(),
        raw_vertices: raw.vertices.len(),
        raw_faces: raw.faces.len(),
        final_vertices: mesh.vertices.len(),
        final_faces: mesh.faces.len(),
        boundary_edges: mesh.boundary_edge_count(),
    };
    Ok((mesh, report))
}

fn cmd_meshify(config: &PipelineConfig, args: &MeshifyArgs) -> Result<()> {
    let cloud = read_ply(&args.cloud)?;
    let fraction = args
        .decimate_fraction
        .unwrap_or(config.stage1.decimate_fraction);
    let theta = args.theta_th.unwrap_or(config.stage1.smoothing.theta_th_deg);
    let (mesh, report) = meshify_cloud(&cloud, &config.stage1, fraction, theta)?;
    write_obj(&mesh, &args.out)?;
    if let Some(path) = &args.report {
        write_json_report(path, &report)?;
    }
    println!(
        "meshed {} points into {} faces",
        report.input_points, report.final_faces
    );
    Ok(())
}

#[derive(Serialize)]
struct RegisterReport {
    transform: [[f64; 4]; 4],
    fitness: f64,
    rmse_geometric: f64,
    rmse_color: f64,
    iterations: usize,
    converged: bool,
}

fn cmd_register(config: &PipelineConfig, args: &RegisterArgs) -> Result<()> {
    let source = read_ply(&args.source)?;
    let target = read_ply(&args.target)?;
    let params = &config.stage2.tracker.icp;
    let init = RigidTransform::identity();
    let result = if args.geometric || source.colors.is_none() || target.colors.is_none() {
        icp_geometric(&source, &target, &init, params)?
    } else {
        icp_colored(&source, &target, &init, params)?
    };
    write_json_report(
        &args.report,
        &RegisterReport {
            transform: matrix_rows(&result.transform),
            fitness: result.fitness,
            rmse_geometric: result.rmse_geometric,
            rmse_color: result.rmse_color,
            iterations: result.iterations,
            converged: result.converged,
        },
    )?;
    println!(
        "fitness {:.3}, rmse {:.4} m after {} iterations",
        result.fitness, result.rmse_geometric, result.iterations
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stage1
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Stage1LabelReport {
    scene_points: usize,
    object_points: usize,
    mesh: MeshifyReport,
    /// Segmentation F-score against the labeled ground truth, when present.
    f_score: Option<f64>,
    canonical_offset: [f64; 3],
}

#[derive(Serialize)]
struct Stage1Report {
    scale: Option<ScaleEstimate>,
    labels: BTreeMap<i64, Stage1LabelReport>,
    timings_ms: BTreeMap<String, f64>,
}

/// Fraction agreement between the extracted object and the ground-truth
/// cloud: precision × recall harmonic mean with NN matching at `tol`.
fn f_score(object: &PointCloud, truth: &PointCloud, tol: f64) -> Option<f64> {
    if object.is_empty() || truth.is_empty() {
        return None;
    }
    let truth_index = NnIndex::build(truth).ok()?;
    let object_index = NnIndex::build(object).ok()?;
    let precision = object
        .points
        .iter()
        .filter(|p| truth_index.nearest(p).distance <= tol)
        .count() as f64
        / object.len() as f64;
    let recall = truth
        .points
        .iter()
        .filter(|p| object_index.nearest(p).distance <= tol)
        .count() as f64
        / truth.len() as f64;
    if precision + recall <= 0.0 {
        return Some(0.0);
    }
    Some(2.0 * precision * recall / (precision + recall))
}

fn cmd_stage1(config: &PipelineConfig, args: &Stage1Args) -> Result<()> {
    if args.labels.is_empty() {
        return Err(Error::InvalidParameter(
            "--labels must list at least one object label".into(),
        ));
    }
    let s1 = &config.stage1;
    let mut timings = BTreeMap::new();
    let scene_ply = args.scene.join("scene.ply");
    if !scene_ply.exists() {
        return Err(Error::ValidationError(format!(
            "scene directory is missing scene.ply: {}",
            scene_ply.display()
        )));
    }
    let cloud = read_ply(&scene_ply)?;
    let poses = args.scene.join("poses.json");

    // Segmentation must run in the capture frame (the masks and camera
    // poses describe the unscaled cloud); the metric correction is applied
    // to each extracted object afterwards.
    let scale = if args.calibrate_scale {
        Some(timed(&mut timings, "calibrate_scale", || {
            calibrate_scale_top_face(&cloud, &s1.green, s1.cube_size_m)
        })?)
    } else {
        None
    };

    fs::create_dir_all(&args.bank)?;
    let mut labels_report = BTreeMap::new();
    for &label in &args.labels {
        let views = load_view_set(&poses, &args.scene, label)?;
        let object = timed(&mut timings, &format!("extract_label{label}"), || {
            build_asset_pipeline(&cloud, &views, &s1.pipeline)
        })?;

        let truth_path = args.scene.join(format!("scene_label{label}.ply"));
        let fscore = if truth_path.exists() {
            // Compared in the capture frame, before metric correction.
            let truth = read_ply(&truth_path)?;
            f_score(&object, &truth, s1.pipeline.voxel_size)
        } else {
            None
        };

        let object = match &scale {
            Some(est) => apply_scale(&object, est),
            None => object,
        };
        let (mesh, mesh_report) = timed(&mut timings, &format!("meshify_label{label}"), || {
            meshify_cloud(&object, s1, s1.decimate_fraction, s1.smoothing.theta_th_deg)
        })?;
        let (mesh, canonical, offset) = canonicalize_asset(&mesh, &object)?;
        let record = AssetRecord {
            id: label.to_string(),
            canonical_cloud: canonical,
            mesh,
            scale_calibrated: scale.is_some(),
        };
        record.validate()?;

        let asset_dir = args.bank.join(label.to_string());
        fs::create_dir_all(&asset_dir)?;
        write_ply(&record.canonical_cloud, &asset_dir.join("canonical.ply"), true)?;
        write_obj(&record.mesh, &asset_dir.join("mesh.obj"))?;
        write_json_report(
            &asset_dir.join("record.json"),
            &serde_json::json!({
                "id": record.id,
                "scale_calibrated": record.scale_calibrated,
                "points": record.canonical_cloud.len(),
                "faces": record.mesh.faces.len(),
            }),
        )?;

        labels_report.insert(
            label,
            Stage1LabelReport {
                scene_points: cloud.len(),
                object_points: object.len(),
                mesh: mesh_report,
                f_score: fscore,
                canonical_offset: offset.into(),
            },
        );
    }

    write_json_report(
        &args.report,
        &Stage1Report {
            scale,
            labels: labels_report,
            timings_ms: timings,
        },
    )?;
    println!(
        "banked {} asset(s) into {}",
        args.labels.len(),
        args.bank.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// track / stage2
// ---------------------------------------------------------------------------

fn load_bank(dir: &Path) -> Result<MemoryBank> {
    let mut bank = MemoryBank::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for asset_dir in entries {
        let record_path = asset_dir.join("record.json");
        if !record_path.exists() {
            continue;
        }
        let meta: serde_json::Value =
            serde_json::from_reader(std::io::BufReader::new(File::open(&record_path)?))?;
        let id = meta
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                Error::ValidationError(format!("{}: missing 'id'", record_path.display()))
            })?
            .to_string();
        let canonical = read_ply(&asset_dir.join("canonical.ply"))?;
        let mesh = scenesync::io::read_obj(&asset_dir.join("mesh.obj"))?;
        bank.add(AssetRecord {
            id,
            canonical_cloud: canonical,
            mesh,
            scale_calibrated: meta
                .get("scale_calibrated")
                .and_then(|v| v.as_bool())
                .unwrap_or(false),
        })?;
    }
    if bank.is_empty() {
        return Err(Error::ValidationError(format!(
            "no assets found in bank directory {}",
            dir.display()
        )));
    }
    Ok(bank)
}

fn load_frames(dir: &Path) -> Result<Vec<FrameSample>> {
    let sidecar = dir.join("frames.json");
    if !sidecar.exists() {
        return Err(Error::ValidationError(format!(
            "frame directory is missing frames.json: {}",
            sidecar.display()
        )));
    }
    let stream: FrameStreamJson =
        serde_json::from_reader(std::io::BufReader::new(File::open(&sidecar)?))?;
    let camera = camera_from(&stream.intrinsics, rows_to_transform(&stream.t_world_cam)?);
    let mut frames = Vec::new();
    for f in &stream.frames {
        let mut visible: Option<PointCloud> = None;
        for (&label, file) in &f.partials {
            let mut partial = read_ply(&dir.join(file))?;
            partial.labels = Some(vec![label; partial.len()]);
            visible = Some(match visible {
                Some(v) => v.concat(&partial),
                None => partial,
            });
        }
        let mut true_poses = BTreeMap::new();
        for (&label, rows) in &f.true_poses {
            true_poses.insert(label, rows_to_transform(rows)?);
        }
        frames.push(FrameSample {
            timestamp: f.timestamp,
            camera: camera.clone(),
            visible_cloud: visible.unwrap_or_else(|| PointCloud::from_points(Vec::new())),
            masks: BTreeMap::new(),
            true_poses,
        });
    }
    Ok(frames)
}

#[derive(Serialize)]
struct TrackRecord {
    frame: usize,
    timestamp: f64,
    label: i64,
    asset_id: Option<String>,
    status: &'static str,
    fitness: f64,
    pose: [[f64; 4]; 4],
}

fn status_str(status: TrackStatus) -> &'static str {
    match status {
        TrackStatus::Tracked => "tracked",
        TrackStatus::Occluded => "occluded",
        TrackStatus::Lost => "lost",
    }
}

fn track_stream(
    frames: &[FrameSample],
    bank: &MemoryBank,
    params: &TrackerParams,
    report: &Path,
) -> Result<usize> {
    let mut state = SyncState::new();
    let mut out = BufWriter::new(File::create(report)?);
    let mut n_tracks = 0;
    for (i, frame) in frames.iter().enumerate() {
        let updates = state.step(frame, bank, params)?;
        n_tracks = n_tracks.max(updates.len());
        for u in updates {
            let record = TrackRecord {
                frame: i,
                timestamp: frame.timestamp,
                label: u.label,
                asset_id: u.asset_id,
                status: status_str(u.status),
                fitness: u.fitness,
                pose: matrix_rows(&u.pose),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(n_tracks)
}

fn cmd_track(config: &PipelineConfig, args: &TrackArgs) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let frames = load_frames(&args.frames)?;
    if frames.is_empty() {
        return Err(Error::EmptyInput("frame stream contains no frames"));
    }
    let n_tracks = track_stream(&frames, &bank, &config.stage2.tracker, &args.report)?;
    println!(
        "tracked {} object(s) over {} frames; report {}",
        n_tracks,
        frames.len(),
        args.report.display()
    );
    Ok(())
}

// -- stage2: scripted avoidance suites --------------------------------------

#[derive(Serialize)]
struct TallyReport {
    n_fa: usize,
    n_ea: usize,
    n_co: usize,
    sr_percent: f64,
    outcomes: Vec<&'static str>,
}

fn tally_report(tally: AvoidanceTally, outcomes: &[AvoidanceOutcome]) -> Result<TallyReport> {
    Ok(TallyReport {
        n_fa: tally.n_fa,
        n_ea: tally.n_ea,
        n_co: tally.n_co,
        sr_percent: success_rate(&tally)?,
        outcomes: outcomes
            .iter()
            .map(|o| match o {
                AvoidanceOutcome::FullAvoidance => "FA",
                AvoidanceOutcome::EdgeAvoidance => "EA",
                AvoidanceOutcome::Collision => "CO",
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct Stage2Report {
    asset_id: String,
    trials_per_suite: usize,
    /// Bank available: tracked objects are completed from their assets.
    seen: BTreeMap<String, TallyReport>,
    /// Bank withheld: objects tracked as raw partial hulls.
    unseen: BTreeMap<String, TallyReport>,
    /// No synchronization at all: the twin is frozen at the first frame.
    stale: BTreeMap<String, TallyReport>,
    timings_ms: BTreeMap<String, f64>,
}

/// Builds one avoidance trial: the asset slides from `start` to `end`
/// (optionally self-rotating), observed as a half-view partial, while the
/// end-effector waypoint sits at `waypoint`.
fn build_trial(
    canonical: &PointCloud,
    label: i64,
    start: Vector3<f64>,
    end: Vector3<f64>,
    spin_deg: f64,
    waypoint: Point3<f64>,
    n_frames: usize,
    camera: &PinholeCamera,
) -> AvoidanceTrial {
    let axis = Unit::new_normalize(Vector3::z());
    let mut frames = Vec::new();
    let mut path = Vec::new();
    let mut true_obstacles = Vec::new();
    for i in 0..n_frames {
        let alpha = i as f64 / (n_frames - 1) as f64;
        let pose = RigidTransform::from_parts(
            Rotation3::from_axis_angle(&axis, (spin_deg * alpha).to_radians()),
            start + (end - start) * alpha,
        );
        let posed = pose.apply(canonical);
        // One-sided observation: the camera-facing local half.
        let inv = pose.inverse();
        let idx: Vec<usize> = (0..posed.len())
            .filter(|&j| inv.transform_point(&posed.points[j]).x >= 0.0)
            .collect();
        let mut partial = posed.select(&idx);
        partial.labels = Some(vec![label; partial.len()]);
        let mut true_poses = BTreeMap::new();
        true_poses.insert(label, pose);
        frames.push(FrameSample {
            timestamp: i as f64 * 0.1,
            camera: camera.clone(),
            visible_cloud: partial,
            masks: BTreeMap::new(),
            true_poses,
        });
        path.push(waypoint);
        true_obstacles.push(vec![posed]);
    }
    AvoidanceTrial {
        frames,
        path,
        true_obstacles,
    }
}

fn cmd_stage2(config: &PipelineConfig, args: &Stage2Args) -> Result<()> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let bank = load_bank(&args.bank)?;
    let params = &config.stage2.tracker;
    let mut timings = BTreeMap::new();

    if let Some(frames_dir) = &args.frames {
        let frames = load_frames(frames_dir)?;
        let tracks_path = args
            .report
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("tracks.jsonl");
        timed(&mut timings, "track_stream", || {
            track_stream(&frames, &bank, params, &tracks_path)
        })?;
    }

    let asset_id = bank
        .ids()
        .next()
        .expect("load_bank rejects empty banks")
        .to_string();
    let record = bank.get(&asset_id)?;
    let label: i64 = asset_id.parse().map_err(|_| {
        Error::ValidationError(format!(
            "asset id '{asset_id}' is not an object label; stage2 suites need label-keyed assets"
        ))
    })?;
    let canonical = &record.canonical_cloud;
    let camera = camera_from(
        &default_intrinsics(),
        look_at(Point3::new(1.0, 0.0, 0.6), Point3::origin()),
    );

    let waypoint = Point3::new(0.30, 0.0, 0.10);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5747_4532);
    let mut suites: BTreeMap<&str, Vec<AvoidanceTrial>> = BTreeMap::new();
    for suite in ["self_rot", "enter_traj"] {
        let trials = (0..config.stage2.trials)
            .map(|_| {
                let lateral: f64 = rng.gen_range(-0.08..0.08);
                match suite {
                    // Object spins in place next to the waypoint.
                    "self_rot" => build_trial(
                        canonical,
                        label,
                        waypoint.coords + Vector3::new(0.0, lateral, 0.0),
                        waypoint.coords + Vector3::new(0.0, lateral, 0.0),
                        90.0,
                        waypoint,
                        11,
                        &camera,
                    ),
                    // Object slides into the trajectory.
                    _ => build_trial(
                        canonical,
                        label,
                        waypoint.coords + Vector3::new(-0.20, lateral, 0.0),
                        waypoint.coords + Vector3::new(0.0, lateral, 0.0),
                        0.0,
                        waypoint,
                        11,
                        &camera,
                    ),
                }
            })
            .collect();
        suites.insert(suite, trials);
    }

    let empty_bank = MemoryBank::new();
    let mut seen = BTreeMap::new();
    let mut unseen = BTreeMap::new();
    let mut stale = BTreeMap::new();
    for (suite, trials) in &suites {
        let (t, o) = timed(&mut timings, &format!("{suite}_seen"), || {
            run_avoidance_eval(trials, &bank, params, true)
        })?;
        seen.insert(suite.to_string(), tally_report(t, &o)?);
        let (t, o) = timed(&mut timings, &format!("{suite}_unseen"), || {
            run_avoidance_eval(trials, &empty_bank, params, true)
        })?;
        unseen.insert(suite.to_string(), tally_report(t, &o)?);
        let (t, o) = timed(&mut timings, &format!("{suite}_stale"), || {
            run_avoidance_eval(trials, &bank, params, false)
        })?;
        stale.insert(suite.to_string(), tally_report(t, &o)?);
    }

    for suite in ["self_rot", "enter_traj"] {
        println!(
            "{suite}: SR seen {:.1}% | unseen {:.1}% | stale twin {:.1}%",
            seen[suite].sr_percent, unseen[suite].sr_percent, stale[suite].sr_percent
        );
    }
    write_json_report(
        &args.report,
        &Stage2Report {
            asset_id,
            trials_per_suite: config.stage2.trials,
            seen,
            unseen,
            stale,
            timings_ms: timings,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-sr / bench
// ---------------------------------------------------------------------------

fn cmd_eval_sr(args: &EvalSrArgs) -> Result<()> {
    let parts: Vec<&str> = args.tally.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParameter(format!(
            "--tally expects FA,EA,CO counts, got '{}'",
            args.tally
        )));
    }
    let counts: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.trim().parse::<usize>().map_err(|_| {
                Error::InvalidParameter(format!("'{p}' is not a non-negative count"))
            })
        })
        .collect::<Result<_>>()?;
    let tally = AvoidanceTally::new(counts[0], counts[1], counts[2]);
    let sr = success_rate(&tally)?;
    println!(
        "SR = {:.1}% (FA {}, EA {}, CO {}, N {})",
        sr,
        tally.n_fa,
        tally.n_ea,
        tally.n_co,
        tally.n_total()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    op: String,
    scene_points: usize,
    runs_ms: Vec<f64>,
}

fn cmd_bench(config: &PipelineConfig, args: &BenchArgs) -> Result<()> {
    use scenesync::synth::{ColorScheme, ObjectSpec, ShapeKind};
    if args.repeat == 0 {
        return Err(Error::InvalidParameter("--repeat must be at least 1".into()));
    }
    let mut rows = Vec::new();
    let mut bench = |op: &str, scene_points: usize, mut f: Box<dyn FnMut() -> Result<()>>| -> Result<()> {
        let mut runs = Vec::new();
        for _ in 0..args.repeat {
            let start = Instant::now();
            f()?;
            runs.push(start.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(BenchRow {
            op: op.to_string(),
            scene_points,
            runs_ms: runs,
        });
        Ok(())
    };

    let spec = SceneSpec {
        objects: vec![ObjectSpec {
            shape: ShapeKind::Cup,
            dimensions: vec![0.04, 0.1],
            pose: PoseSpec::default(),
            color: ColorScheme::Uniform {
                rgb: [0.6, 0.4, 0.3],
            },
            label: 1,
        }],
        table: None,
        green_cube: None,
        seed: config.seed,
        color_noise: 0.0,
    };
    for density in [50_000.0, 150_000.0, 400_000.0] {
        let cloud = sample_scene(&spec, density)?;
        let n = cloud.len();
        let c = cloud.clone();
        let voxel = config.stage1.pipeline.voxel_size;
        bench(
            "voxel_downsample",
            n,
            Box::new(move || scenesync::filter::voxel_downsample(&c, voxel).map(|_| ())),
        )?;
        let c = cloud.clone();
        bench(
            "detect_opening",
            n,
            Box::new(move || {
                detect_opening(&c, &OpeningParams::default()).map(|_| ())
            }),
        )?;
        let down = scenesync::filter::voxel_downsample(&cloud, 0.004)?;
        let nd = down.len();
        let recon = config.stage1.reconstruct.clone();
        let c = down.clone();
        bench(
            "reconstruct_mesh",
            nd,
            Box::new(move || reconstruct_mesh(&c, &recon).map(|_| ())),
        )?;
        let parts = sample_scene_parts(&spec, density)?;
        let (_, canonical, _) = &parts.objects[0];
        let shifted = canonical.translated(Vector3::new(0.004, -0.002, 0.003));
        let (src, tgt) = (shifted, canonical.clone());
        let icp = config.stage2.tracker.icp.clone();
        bench(
            "icp_colored",
            canonical.len(),
            Box::new(move || {
                icp_colored(&src, &tgt, &RigidTransform::identity(), &icp).map(|_| ())
            }),
        )?;
    }

    write_json_report(&args.report, &serde_json::json!({ "rows": rows }))?;
    for row in &rows {
        println!(
            "{:<18} {:>8} pts  {:?} ms",
            row.op, row.scene_points, row.runs_ms
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Compile-time use of items that only matter to library consumers of the
// CLI conventions (kept here so the binary exercises the whole API).
// ---------------------------------------------------------------------------

#[allow(dead_code)]
fn _api_surface(track: &scenesync::tracker::Track, bank: &MemoryBank) -> Result<PointCloud> {
    // `complete_object` is what a downstream simulator consumes; the CLI
    // reports poses only, but the call is part of the supported surface.
    let _ = QuatWxyz::from_transform(&RigidTransform::identity());
    complete_object(track, bank)
}
