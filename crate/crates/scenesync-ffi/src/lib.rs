//! C ABI for the scenesync library.
//!
//! Conventions:
//! - Every handle type is opaque; create/free pairs own the memory.
//!   Passing a freed or foreign pointer is undefined behavior, passing
//!   NULL is reported as [`SsStatus::NullPointer`].
//! - Every fallible call returns an [`SsStatus`]; on failure a
//!   human-readable message is retrievable with
//!   [`ss_last_error_message`] (thread-local, valid until the next
//!   failing call on the same thread).
//! - Poses are 4×4 row-major `double[16]` rigid transforms; point buffers
//!   are interleaved `double[3 * n]` XYZ in meters; colors are
//!   interleaved `double[3 * n]` RGB in [0, 1].
//! - Panics never cross the boundary: they are caught and reported as
//!   [`SsStatus::Panic`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::{Matrix4, Point3};
use scenesync::error::Error;
use scenesync::geom::{PointCloud, RgbColor, RigidTransform};
use scenesync::io::{read_obj, read_ply, write_ply};
use scenesync::projseg::PinholeCamera;
use scenesync::register::{icp_colored, icp_geometric, IcpParams};
use scenesync::synth::FrameSample;
use scenesync::tracker::{
    complete_object, success_rate, AssetRecord, AvoidanceTally, MemoryBank, SyncState,
    TrackStatus, TrackUpdate, TrackerParams,
};

// ---------------------------------------------------------------------------
// Status codes and error reporting.
// ---------------------------------------------------------------------------

/// Result code of every fallible API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// An argument or parameter value was rejected.
    InvalidArgument = 2,
    /// The referenced asset or track does not exist.
    NotFound = 3,
    /// An asset with the same id is already banked.
    Duplicate = 4,
    /// A file could not be parsed.
    Parse = 5,
    /// The file system reported an error.
    Io = 6,
    /// An input collection was empty where data is required.
    Empty = 7,
    /// Registration failed or had too few points.
    Registration = 8,
    /// The track exists but is not currently in tracked status.
    NotTracked = 9,
    /// Any other pipeline failure.
    Pipeline = 10,
    /// A string argument was not valid UTF-8.
    Utf8 = 11,
    /// An internal panic was caught at the boundary.
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> SsStatus {
    match e {
        Error::EmptyInput(_) | Error::EmptySegmentation => SsStatus::Empty,
        Error::InvalidParameter(_)
        | Error::ValidationError(_)
        | Error::InvalidFrame(_)
        | Error::DegenerateInput(_) => SsStatus::InvalidArgument,
        Error::ParseError { .. } | Error::UnsupportedFormat(_) | Error::Json(_) => SsStatus::Parse,
        Error::NotFound(_) => SsStatus::NotFound,
        Error::DuplicateId(_) => SsStatus::Duplicate,
        Error::RegistrationFailed(_) | Error::TooSparse { .. } => SsStatus::Registration,
        Error::NotTracked => SsStatus::NotTracked,
        Error::Io(_) => SsStatus::Io,
        Error::Stage { source, .. } => status_of(source),
        _ => SsStatus::Pipeline,
    }
}

fn fail(e: Error) -> SsStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null_arg(name: &str) -> SsStatus {
    set_error(&format!("{name} must not be NULL"));
    SsStatus::NullPointer
}

/// Runs `f`, converting panics into [`SsStatus::Panic`].
fn guard(f: impl FnOnce() -> SsStatus) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            SsStatus::Panic
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn path_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, SsStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        SsStatus::Utf8
    })
}

fn pose_from_raw(raw: &[f64; 16]) -> Result<RigidTransform, Error> {
    let mut m = Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            m[(r, c)] = raw[r * 4 + c];
        }
    }
    RigidTransform::from_matrix(&m, 1e-6)
}

fn pose_to_raw(t: &RigidTransform, out: &mut [f64; 16]) {
    let m = t.matrix();
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
}

// ---------------------------------------------------------------------------
// Opaque handles.
// ---------------------------------------------------------------------------

/// Opaque point cloud handle.
pub struct SsCloud(PointCloud);
/// Opaque memory-bank handle (library of canonical object assets).
pub struct SsBank(MemoryBank);
/// Opaque tracker handle: sliding-window state plus the updates produced
/// by the most recent step.
pub struct SsTracker {
    state: SyncState,
    params: TrackerParams,
    camera: PinholeCamera,
    updates: Vec<TrackUpdate>,
}

/// Track status of one object, mirrored across the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsTrackStatus {
    /// Confidently registered this frame.
    Tracked = 0,
    /// Temporarily unobserved; last pose held.
    Occluded = 1,
    /// Unobserved for too long; no longer contributes geometry.
    Lost = 2,
}

/// One per-object tracking result, written by `ss_tracker_get_update`.
#[repr(C)]
pub struct SsTrackUpdate {
    /// Object label the update belongs to.
    pub label: i64,
    /// Current track status.
    pub status: SsTrackStatus,
    /// Registration inlier fraction in [0, 1].
    pub fitness: f64,
    /// World-from-canonical pose, 4×4 row-major.
    pub pose: [f64; 16],
    /// True when the object is backed by a banked asset (completion
    /// available), false for hull-only obstacle tracks.
    pub has_asset: bool,
}

// ---------------------------------------------------------------------------
// Point clouds.
// ---------------------------------------------------------------------------

/// Creates a cloud from `n` interleaved XYZ points. `rgb` (interleaved
/// RGB in [0,1]) and `labels` may be NULL.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles; `rgb`, if non-NULL, to `3 * n`
/// doubles; `labels`, if non-NULL, to `n` int64 values.
#[no_mangle]
pub unsafe extern "C" fn ss_cloud_create(
    xyz: *const f64,
    n: usize,
    rgb: *const f64,
    labels: *const i64,
    out: *mut *mut SsCloud,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        if xyz.is_null() && n > 0 {
            return null_arg("xyz");
        }
        let coords: &[f64] = if n == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(xyz, 3 * n)
        };
        let points = (0..n)
            .map(|i| Point3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]))
            .collect();
        let mut cloud = PointCloud::from_points(points);
        if !rgb.is_null() {
            let c = std::slice::from_raw_parts(rgb, 3 * n);
            cloud.colors = Some(
                (0..n)
                    .map(|i| RgbColor::new(c[3 * i], c[3 * i + 1], c[3 * i + 2]))
                    .collect(),
            );
        }
        if !labels.is_null() {
            cloud.labels = Some(std::slice::from_raw_parts(labels, n).to_vec());
        }
        if let Err(e) = cloud.validate() {
            return fail(e);
        }
        *out = Box::into_raw(Box::new(SsCloud(cloud)));
        SsStatus::Ok
    })
}

/// Reads a cloud from a PLY file (ASCII or binary little-endian).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_cloud_read_ply(path: *const c_char, out: *mut *mut SsCloud) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match read_ply(Path::new(path)) {
            Ok(cloud) => {
                *out = Box::into_raw(Box::new(SsCloud(cloud)));
                SsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes a cloud as PLY; `binary` selects binary little-endian.
///
/// # Safety
/// `cloud` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ss_cloud_write_ply(
    cloud: *const SsCloud,
    path: *const c_char,
    binary: bool,
) -> SsStatus {
    guard(|| {
        let Some(cloud) = cloud.as_ref() else {
            return null_arg("cloud");
        };
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match write_ply(&cloud.0, Path::new(path), binary) {
            Ok(()) => SsStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Number of points; 0 for NULL.
///
/// # Safety
/// `cloud` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_cloud_len(cloud: *const SsCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the interleaved XYZ coordinates into `buf` (`capacity` doubles,
/// must be at least `3 * ss_cloud_len`).
///
/// # Safety
/// `cloud` must be a live handle; `buf` must point to `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_cloud_copy_xyz(
    cloud: *const SsCloud,
    buf: *mut f64,
    capacity: usize,
) -> SsStatus {
    guard(|| {
        let Some(cloud) = cloud.as_ref() else {
            return null_arg("cloud");
        };
        if buf.is_null() {
            return null_arg("buf");
        }
        let needed = 3 * cloud.0.len();
        if capacity < needed {
            set_error(&format!("buffer holds {capacity} doubles, need {needed}"));
            return SsStatus::InvalidArgument;
        }
        let out = std::slice::from_raw_parts_mut(buf, needed);
        for (i, p) in cloud.0.points.iter().enumerate() {
            out[3 * i] = p.x;
            out[3 * i + 1] = p.y;
            out[3 * i + 2] = p.z;
        }
        SsStatus::Ok
    })
}

/// Applies a rigid transform (4×4 row-major) to the cloud in place.
///
/// # Safety
/// `cloud` must be a live handle; `pose` must point to 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_cloud_transform(cloud: *mut SsCloud, pose: *const f64) -> SsStatus {
    guard(|| {
        let Some(cloud) = cloud.as_mut() else {
            return null_arg("cloud");
        };
        if pose.is_null() {
            return null_arg("pose");
        }
        let raw: &[f64; 16] = &*(pose as *const [f64; 16]);
        match pose_from_raw(raw) {
            Ok(t) => {
                cloud.0 = t.apply(&cloud.0);
                SsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Frees a cloud handle; NULL is a no-op.
///
/// # Safety
/// `cloud` must be NULL or an owned live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_cloud_free(cloud: *mut SsCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

// ---------------------------------------------------------------------------
// Registration.
// ---------------------------------------------------------------------------

/// Registers `source` onto `target` with colored ICP (`use_color`) or
/// geometric point-to-plane ICP. `init` (4×4 row-major) may be NULL for
/// identity. Writes the source-to-target pose and the inlier fitness.
///
/// # Safety
/// Handles must be live; `out_pose` must point to 16 doubles;
/// `out_fitness` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ss_register(
    source: *const SsCloud,
    target: *const SsCloud,
    init: *const f64,
    use_color: bool,
    out_pose: *mut f64,
    out_fitness: *mut f64,
) -> SsStatus {
    guard(|| {
        let (Some(source), Some(target)) = (source.as_ref(), target.as_ref()) else {
            return null_arg("source/target");
        };
        if out_pose.is_null() {
            return null_arg("out_pose");
        }
        let init_t = if init.is_null() {
            RigidTransform::identity()
        } else {
            match pose_from_raw(&*(init as *const [f64; 16])) {
                Ok(t) => t,
                Err(e) => return fail(e),
            }
        };
        let params = IcpParams::default();
        let result = if use_color {
            icp_colored(&source.0, &target.0, &init_t, &params)
        } else {
            icp_geometric(&source.0, &target.0, &init_t, &params)
        };
        match result {
            Ok(r) => {
                pose_to_raw(&r.transform, &mut *(out_pose as *mut [f64; 16]));
                if !out_fitness.is_null() {
                    *out_fitness = r.fitness;
                }
                SsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

// ---------------------------------------------------------------------------
// Memory bank.
// ---------------------------------------------------------------------------

/// Creates an empty memory bank.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_bank_create(out: *mut *mut SsBank) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        *out = Box::into_raw(Box::new(SsBank(MemoryBank::new())));
        SsStatus::Ok
    })
}

/// Adds an asset: a canonical cloud (centroid at the origin) plus its
/// mesh read from an OBJ file. The cloud is copied.
///
/// # Safety
/// `bank` and `canonical` must be live handles; `id` and
/// `mesh_obj_path` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ss_bank_add(
    bank: *mut SsBank,
    id: *const c_char,
    canonical: *const SsCloud,
    mesh_obj_path: *const c_char,
) -> SsStatus {
    guard(|| {
        let Some(bank) = bank.as_mut() else {
            return null_arg("bank");
        };
        let Some(canonical) = canonical.as_ref() else {
            return null_arg("canonical");
        };
        let id = match path_arg(id, "id") {
            Ok(s) => s.to_string(),
            Err(s) => return s,
        };
        let mesh_path = match path_arg(mesh_obj_path, "mesh_obj_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let mesh = match read_obj(Path::new(mesh_path)) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match bank.0.add(AssetRecord {
            id,
            canonical_cloud: canonical.0.clone(),
            mesh,
            scale_calibrated: false,
        }) {
            Ok(()) => SsStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Number of banked assets; 0 for NULL.
///
/// # Safety
/// `bank` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_bank_len(bank: *const SsBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.len())
}

/// Frees a bank handle; NULL is a no-op.
///
/// # Safety
/// `bank` must be NULL or an owned live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_bank_free(bank: *mut SsBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

// ---------------------------------------------------------------------------
// Tracker.
// ---------------------------------------------------------------------------

fn default_camera() -> PinholeCamera {
    PinholeCamera {
        fx: 580.0,
        fy: 580.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
        t_world_cam: RigidTransform::identity(),
    }
}

/// Creates a tracker with default parameters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_tracker_create(out: *mut *mut SsTracker) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        *out = Box::into_raw(Box::new(SsTracker {
            state: SyncState::new(),
            params: TrackerParams::default(),
            camera: default_camera(),
            updates: Vec::new(),
        }));
        SsStatus::Ok
    })
}

/// Ingests one frame: `n` labeled partial clouds observed at `timestamp`
/// (must be non-decreasing). The resulting per-object updates are
/// retrievable until the next step.
///
/// # Safety
/// `tracker` and `bank` must be live handles; `labels` must point to `n`
/// int64 values and `clouds` to `n` live cloud handles.
#[no_mangle]
pub unsafe extern "C" fn ss_tracker_step(
    tracker: *mut SsTracker,
    bank: *const SsBank,
    timestamp: f64,
    labels: *const i64,
    clouds: *const *const SsCloud,
    n: usize,
) -> SsStatus {
    guard(|| {
        let Some(tracker) = tracker.as_mut() else {
            return null_arg("tracker");
        };
        let Some(bank) = bank.as_ref() else {
            return null_arg("bank");
        };
        let (labels, clouds): (&[i64], &[*const SsCloud]) = if n == 0 {
            (&[], &[])
        } else {
            if labels.is_null() || clouds.is_null() {
                return null_arg("labels/clouds");
            }
            (
                std::slice::from_raw_parts(labels, n),
                std::slice::from_raw_parts(clouds, n),
            )
        };
        let mut visible: Option<PointCloud> = None;
        for (&label, &cloud) in labels.iter().zip(clouds) {
            let Some(cloud) = cloud.as_ref() else {
                return null_arg("clouds[i]");
            };
            let mut partial = cloud.0.clone();
            partial.labels = Some(vec![label; partial.len()]);
            visible = Some(match visible {
                Some(v) => v.concat(&partial),
                None => partial,
            });
        }
        let frame = FrameSample {
            timestamp,
            camera: tracker.camera.clone(),
            visible_cloud: visible.unwrap_or_else(|| PointCloud::from_points(Vec::new())),
            masks: BTreeMap::new(),
            true_poses: BTreeMap::new(),
        };
        match tracker.state.step(&frame, &bank.0, &tracker.params) {
            Ok(updates) => {
                tracker.updates = updates;
                SsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of updates produced by the most recent step; 0 for NULL.
///
/// # Safety
/// `tracker` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_tracker_update_count(tracker: *const SsTracker) -> usize {
    tracker.as_ref().map_or(0, |t| t.updates.len())
}

/// Copies update `index` of the most recent step into `out`.
///
/// # Safety
/// `tracker` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_tracker_get_update(
    tracker: *const SsTracker,
    index: usize,
    out: *mut SsTrackUpdate,
) -> SsStatus {
    guard(|| {
        let Some(tracker) = tracker.as_ref() else {
            return null_arg("tracker");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let Some(update) = tracker.updates.get(index) else {
            set_error(&format!(
                "update index {index} out of range ({} available)",
                tracker.updates.len()
            ));
            return SsStatus::NotFound;
        };
        let mut pose = [0.0; 16];
        pose_to_raw(&update.pose, &mut pose);
        *out = SsTrackUpdate {
            label: update.label,
            status: match update.status {
                TrackStatus::Tracked => SsTrackStatus::Tracked,
                TrackStatus::Occluded => SsTrackStatus::Occluded,
                TrackStatus::Lost => SsTrackStatus::Lost,
            },
            fitness: update.fitness,
            pose,
            has_asset: update.asset_id.is_some(),
        };
        SsStatus::Ok
    })
}

/// Completes the tracked object `label` from its banked asset: the
/// canonical cloud posed at the current estimate. The returned cloud is a
/// new handle owned by the caller.
///
/// # Safety
/// `tracker` and `bank` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_tracker_complete(
    tracker: *const SsTracker,
    bank: *const SsBank,
    label: i64,
    out: *mut *mut SsCloud,
) -> SsStatus {
    guard(|| {
        let Some(tracker) = tracker.as_ref() else {
            return null_arg("tracker");
        };
        let Some(bank) = bank.as_ref() else {
            return null_arg("bank");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let Some(track) = tracker.state.track(label) else {
            set_error(&format!("no track for label {label}"));
            return SsStatus::NotFound;
        };
        match complete_object(track, &bank.0) {
            Ok(cloud) => {
                *out = Box::into_raw(Box::new(SsCloud(cloud)));
                SsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Frees a tracker handle; NULL is a no-op.
///
/// # Safety
/// `tracker` must be NULL or an owned live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_tracker_free(tracker: *mut SsTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

/// Weighted success rate in percent: (FA + 0.8 EA) / (FA + EA + CO) × 100.
/// Fails with [`SsStatus::Empty`] when all counts are zero.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_success_rate(
    n_fa: usize,
    n_ea: usize,
    n_co: usize,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return null_arg("out");
        }
        match success_rate(&AvoidanceTally::new(n_fa, n_ea, n_co)) {
            Ok(sr) => {
                *out = sr;
                SsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
