//! Online scene synchronization.
//!
//! A [`MemoryBank`] holds canonical object assets; a [`SyncState`] consumes
//! a stream of labeled frames and maintains one track per object: pose via
//! warm-started colored ICP against the bank asset, constant-pose hold
//! through occlusions, and convex-hull obstacle geometry for objects the
//! bank does not know. Tracked objects can be *completed* — the partial
//! observation replaced by the full canonical cloud at the tracked pose.
//! The module also provides the weighted avoidance success-rate metric and
//! a scripted avoidance evaluation harness.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, RigidTransform};
use crate::mesh::{convex_hull, hull_outside_distance, TriangleMesh};
use crate::nn::NnIndex;
use crate::register::{icp_colored, icp_geometric, IcpParams};
use crate::synth::FrameSample;

/// Canonical clouds must be centered this tightly to enter the bank.
const CENTROID_TOL: f64 = 1e-6;

/// Fewer visible points than this counts as "not observed" for tracking.
const MIN_PARTIAL_POINTS: usize = 10;

// ---------------------------------------------------------------------------
// Memory bank.
// ---------------------------------------------------------------------------

/// One reusable object asset: a canonical (origin-centered) point cloud and
/// its simplified mesh.
#[derive(Debug, Clone)]
pub struct AssetRecord {
    pub id: String,
    /// Centroid at the origin within [`CENTROID_TOL`].
    pub canonical_cloud: PointCloud,
    pub mesh: TriangleMesh,
    /// Whether metric scale was calibrated against the reference cube.
    pub scale_calibrated: bool,
}

impl AssetRecord {
    /// Checks the centering invariant the tracker relies on: completion is
    /// `pose.apply(canonical_cloud)`, which is only a pose if the cloud has
    /// no baked-in offset.
    pub fn validate(&self) -> Result<()> {
        let centroid = self
            .canonical_cloud
            .centroid()
            .ok_or(Error::EmptyInput("asset canonical cloud is empty"))?;
        let norm = centroid.coords.norm();
        if norm > CENTROID_TOL {
            return Err(Error::InvariantViolation(format!(
                "asset '{}': canonical cloud centroid norm {norm:.3e} exceeds {CENTROID_TOL:.0e}",
                self.id
            )));
        }
        Ok(())
    }
}

/// Asset store keyed by unique id.
#[derive(Debug, Clone, Default)]
pub struct MemoryBank {
    records: BTreeMap<String, AssetRecord>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    /// Adds a validated record; ids are unique.
    pub fn add(&mut self, record: AssetRecord) -> Result<()> {
        record.validate()?;
        if self.records.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        self.records.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&AssetRecord> {
        self.records
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("asset id '{id}'")))
    }
}

// ---------------------------------------------------------------------------
// Tracks and parameters.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    /// Confidently registered in the current frame.
    Tracked,
    /// Not observed (or registration below the fitness gate); pose held.
    Occluded,
    /// Missed for more than `lost_after` consecutive frames.
    Lost,
}

/// Per-object tracking state.
#[derive(Debug, Clone)]
pub struct Track {
    pub label: i64,
    /// Bank asset backing this track, if recognized.
    pub asset_id: Option<String>,
    /// World pose of the canonical asset (canonical → world).
    pub pose: RigidTransform,
    /// ICP inlier fraction of the last registration attempt.
    pub fitness: f64,
    pub status: TrackStatus,
    /// World-frame convex-hull obstacle geometry for bank-less objects.
    pub hull: Option<TriangleMesh>,
    /// Consecutive frames without a confident observation.
    pub misses: usize,
}

/// Immutable per-frame snapshot of one track, safe to publish.
#[derive(Debug, Clone)]
pub struct TrackUpdate {
    pub label: i64,
    pub asset_id: Option<String>,
    pub status: TrackStatus,
    pub pose: RigidTransform,
    pub fitness: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    /// Sliding-window capacity (recent frames kept besides the first).
    pub window: usize,
    /// Minimum ICP fitness for "tracked" status.
    pub fit_min: f64,
    /// Consecutive misses before a track is declared lost.
    pub lost_after: usize,
    pub icp: IcpParams,
    /// Full-avoidance clearance threshold (m).
    pub eps_fa: f64,
    /// Edge-avoidance maximum contact depth (m).
    pub eps_ea: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            window: 8,
            fit_min: 0.6,
            lost_after: 30,
            icp: IcpParams::default(),
            eps_fa: 0.010,
            eps_ea: 0.003,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fit_min) {
            return Err(Error::InvalidParameter(format!(
                "fit_min must be in [0, 1], got {}",
                self.fit_min
            )));
        }
        if self.lost_after == 0 {
            return Err(Error::InvalidParameter(
                "lost_after must be at least 1".into(),
            ));
        }
        if !(self.eps_fa > 0.0) || !(self.eps_ea > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clearance thresholds must be positive, got eps_fa={} eps_ea={}",
                self.eps_fa, self.eps_ea
            )));
        }
        self.icp.validate()
    }
}

// ---------------------------------------------------------------------------
// Sync state machine.
// ---------------------------------------------------------------------------

/// Online synchronization state: the pinned first frame, a bounded FIFO of
/// recent frames, and per-object tracks. Single-owner; one `step` at a time.
#[derive(Debug, Default)]
pub struct SyncState {
    first_frame: Option<FrameSample>,
    window: VecDeque<FrameSample>,
    tracks: BTreeMap<i64, Track>,
    last_timestamp: Option<f64>,
}

impl SyncState {
    pub fn new() -> Self {
        Self::default()
    }

    /// The persistently stored first frame; never evicted.
    pub fn first_frame(&self) -> Option<&FrameSample> {
        self.first_frame.as_ref()
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn window(&self) -> impl Iterator<Item = &FrameSample> {
        self.window.iter()
    }

    pub fn tracks(&self) -> &BTreeMap<i64, Track> {
        &self.tracks
    }

    pub fn track(&self, label: i64) -> Option<&Track> {
        self.tracks.get(&label)
    }

    /// Ingests one frame: registers every labeled partial against the bank
    /// (warm-started from the last pose), holds poses through occlusions,
    /// builds hull obstacles for unrecognized objects, and appends the frame
    /// to the window. Returns one update per live track, ordered by label.
    pub fn step(
        &mut self,
        frame: &FrameSample,
        bank: &MemoryBank,
        params: &TrackerParams,
    ) -> Result<Vec<TrackUpdate>> {
        params.validate()?;
        if let Some(last) = self.last_timestamp {
            if frame.timestamp < last {
                return Err(Error::InvalidFrame(format!(
                    "timestamp {} precedes previous frame at {last}",
                    frame.timestamp
                )));
            }
        }

        let mut labels: BTreeSet<i64> = self.tracks.keys().copied().collect();
        if let Some(frame_labels) = frame.visible_cloud.labels.as_ref() {
            labels.extend(frame_labels.iter().copied());
        }

        for label in labels {
            let partial = frame.partial_for(label);
            let observed = partial.len() >= MIN_PARTIAL_POINTS;
            let asset = bank.get(&label.to_string()).ok();

            match (asset, observed) {
                (Some(record), true) => {
                    // Warm start: the ICP source→target transform maps the
                    // world-frame partial onto the canonical cloud, i.e. the
                    // inverse of the object pose.
                    let init = match self.tracks.get(&label) {
                        Some(track) => track.pose.inverse(),
                        None => {
                            let centroid = partial.centroid().expect("non-empty partial");
                            RigidTransform::from_translation(-centroid.coords)
                        }
                    };
                    let use_color = params.icp.lambda_c > 0.0
                        && partial.colors.is_some()
                        && record.canonical_cloud.colors.is_some();
                    let result = if use_color {
                        icp_colored(&partial, &record.canonical_cloud, &init, &params.icp)
                    } else {
                        icp_geometric(&partial, &record.canonical_cloud, &init, &params.icp)
                    };
                    match result {
                        Ok(r) if r.fitness >= params.fit_min => {
                            let track = self.tracks.entry(label).or_insert_with(|| Track {
                                label,
                                asset_id: Some(record.id.clone()),
                                pose: RigidTransform::identity(),
                                fitness: 0.0,
                                status: TrackStatus::Tracked,
                                hull: None,
                                misses: 0,
                            });
                            track.asset_id = Some(record.id.clone());
                            track.pose = r.transform.inverse();
                            track.fitness = r.fitness;
                            track.status = TrackStatus::Tracked;
                            track.misses = 0;
                        }
                        Ok(r) => self.record_miss(label, r.fitness, params),
                        Err(_) => self.record_miss(label, 0.0, params),
                    }
                }
                (None, true) => {
                    // No bank asset: track the raw partial with a convex-hull
                    // obstacle stand-in, anchored at its centroid.
                    if let Ok(hull) = convex_hull(&partial) {
                        let centroid = partial.centroid().expect("non-empty partial");
                        let track = self.tracks.entry(label).or_insert_with(|| Track {
                            label,
                            asset_id: None,
                            pose: RigidTransform::identity(),
                            fitness: 0.0,
                            status: TrackStatus::Tracked,
                            hull: None,
                            misses: 0,
                        });
                        track.pose = RigidTransform::from_translation(centroid.coords);
                        track.fitness = 1.0;
                        track.status = TrackStatus::Tracked;
                        track.hull = Some(hull);
                        track.misses = 0;
                    } else {
                        self.record_miss(label, 0.0, params);
                    }
                }
                (_, false) => self.record_miss(label, 0.0, params),
            }
        }

        if self.first_frame.is_none() {
            self.first_frame = Some(frame.clone());
        }
        self.window.push_back(frame.clone());
        while self.window.len() > params.window {
            self.window.pop_front();
        }
        self.last_timestamp = Some(frame.timestamp);

        Ok(self
            .tracks
            .values()
            .map(|t| TrackUpdate {
                label: t.label,
                asset_id: t.asset_id.clone(),
                status: t.status,
                pose: t.pose,
                fitness: t.fitness,
            })
            .collect())
    }

    /// Marks an existing track as missed this frame (pose held constant);
    /// unknown labels stay untracked until first confidently observed.
    fn record_miss(&mut self, label: i64, fitness: f64, params: &TrackerParams) {
        if let Some(track) = self.tracks.get_mut(&label) {
            track.misses += 1;
            track.fitness = fitness;
            track.status = if track.misses > params.lost_after {
                TrackStatus::Lost
            } else {
                TrackStatus::Occluded
            };
        }
    }
}

/// Replaces a partial observation with the full asset geometry: exactly the
/// bank's canonical cloud transformed by the track's current pose.
pub fn complete_object(track: &Track, bank: &MemoryBank) -> Result<PointCloud> {
    if track.status != TrackStatus::Tracked {
        return Err(Error::NotTracked);
    }
    let id = track.asset_id.as_ref().ok_or(Error::NotTracked)?;
    let record = bank.get(id)?;
    Ok(track.pose.apply(&record.canonical_cloud))
}

/// World-frame obstacle geometry of every live track: completed clouds for
/// recognized objects (held pose while occluded), hull vertices otherwise.
pub fn obstacle_estimate(state: &SyncState, bank: &MemoryBank) -> PointCloud {
    let mut out = PointCloud::from_points(Vec::new());
    for track in state.tracks().values() {
        if track.status == TrackStatus::Lost {
            continue;
        }
        if let Some(id) = track.asset_id.as_ref() {
            if let Ok(record) = bank.get(id) {
                out = out.concat(&track.pose.apply(&record.canonical_cloud));
                continue;
            }
        }
        if let Some(hull) = track.hull.as_ref() {
            out = out.concat(&PointCloud::from_points(hull.vertices.clone()));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Avoidance metric.
// ---------------------------------------------------------------------------

/// Trial outcome counts for the weighted success rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AvoidanceTally {
    /// Full avoidance: no contact (weight 1.0).
    pub n_fa: usize,
    /// Edge avoidance: slight contact (weight 0.8).
    pub n_ea: usize,
    /// Collision: noticeable contact (weight 0.0).
    pub n_co: usize,
}

impl AvoidanceTally {
    pub fn new(n_fa: usize, n_ea: usize, n_co: usize) -> Self {
        Self { n_fa, n_ea, n_co }
    }

    pub fn n_total(&self) -> usize {
        self.n_fa + self.n_ea + self.n_co
    }
}

/// Weighted success rate SR = (N_FA + 0.8 N_EA) / N × 100, in percent.
/// Exact; round only for display.
pub fn success_rate(tally: &AvoidanceTally) -> Result<f64> {
    let n = tally.n_total();
    if n == 0 {
        return Err(Error::EmptyInput("avoidance tally has zero trials"));
    }
    Ok((tally.n_fa as f64 + 0.8 * tally.n_ea as f64) / n as f64 * 100.0)
}

/// Per-trial avoidance classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvoidanceOutcome {
    FullAvoidance,
    EdgeAvoidance,
    Collision,
}

/// One scripted avoidance trial: a frame stream, the nominal end-effector
/// waypoint per frame, and the ground-truth world-frame cloud of each
/// obstacle per frame (for classification only — the policy never sees it).
#[derive(Debug, Clone)]
pub struct AvoidanceTrial {
    pub frames: Vec<FrameSample>,
    pub path: Vec<Point3<f64>>,
    pub true_obstacles: Vec<Vec<PointCloud>>,
}

/// Worst signed clearance from `p` to an obstacle cloud: positive outside
/// its convex hull, negative by the contact depth when inside. Falls back
/// to the unsigned nearest-point distance for degenerate clouds.
fn signed_clearance(cloud: &PointCloud, p: &Point3<f64>) -> f64 {
    match convex_hull(cloud) {
        Ok(hull) => hull_outside_distance(&hull, p),
        Err(_) => match NnIndex::build(cloud) {
            Ok(index) => index.nearest(p).distance,
            Err(_) => f64::INFINITY,
        },
    }
}

/// Signed hull clearance of `p` plus the outward normal of the supporting
/// face — the direction in which the clearance grows fastest. Works from
/// inside the hull too, where the distance to the nearest *point* would be
/// misleadingly large.
fn hull_clearance_and_normal(
    hull: &TriangleMesh,
    p: &Point3<f64>,
) -> (f64, nalgebra::Vector3<f64>) {
    let mut best = (f64::NEG_INFINITY, nalgebra::Vector3::z());
    for f in &hull.faces {
        let n = (hull.vertices[f[1]] - hull.vertices[f[0]])
            .cross(&(hull.vertices[f[2]] - hull.vertices[f[0]]));
        if n.norm() <= 1e-18 {
            continue;
        }
        let n = n.normalize();
        let s = n.dot(&(p - hull.vertices[f[0]]));
        if s > best.0 {
            best = (s, n);
        }
    }
    best
}

/// Runs scripted avoidance trials and tallies FA / EA / CO outcomes.
///
/// Per frame the nominal waypoint is re-planned by a trivial
/// clearance-keeping policy: if the estimated obstacle geometry comes
/// within `2 × eps_fa` of the waypoint, the waypoint is pushed out to that
/// standoff along the away-from-obstacle direction. With `tracking` the
/// estimate is the synchronized scene ([`obstacle_estimate`] after each
/// `step`); without it the estimate is frozen at the first frame's visible
/// cloud — a stale, never-updated twin. Each trial is classified by the
/// minimum signed clearance between the executed waypoints and the true
/// obstacle hulls: clearance > `eps_fa` → FA, contact depth ≤ `eps_ea` →
/// EA, deeper → CO.
pub fn run_avoidance_eval(
    trials: &[AvoidanceTrial],
    bank: &MemoryBank,
    params: &TrackerParams,
    tracking: bool,
) -> Result<(AvoidanceTally, Vec<AvoidanceOutcome>)> {
    params.validate()?;
    let standoff = 2.0 * params.eps_fa;
    let mut tally = AvoidanceTally::default();
    let mut outcomes = Vec::with_capacity(trials.len());

    for (ti, trial) in trials.iter().enumerate() {
        if trial.frames.is_empty()
            || trial.frames.len() != trial.path.len()
            || trial.frames.len() != trial.true_obstacles.len()
        {
            return Err(Error::InvalidParameter(format!(
                "trial {ti}: frames ({}), path ({}) and true obstacles ({}) must have equal non-zero lengths",
                trial.frames.len(),
                trial.path.len(),
                trial.true_obstacles.len()
            )));
        }

        let mut state = SyncState::new();
        let mut static_estimate: Option<PointCloud> = None;
        let mut min_clearance = f64::INFINITY;

        for (i, frame) in trial.frames.iter().enumerate() {
            let estimate = if tracking {
                state.step(frame, bank, params)?;
                obstacle_estimate(&state, bank)
            } else {
                static_estimate
                    .get_or_insert_with(|| frame.visible_cloud.clone())
                    .clone()
            };

            // Clearance-keeping re-plan against the *estimated* geometry:
            // if the waypoint comes closer than the standoff (or ends up
            // inside the estimate), push it out along the supporting-face
            // normal. A single merged hull stands in for a real planner.
            let mut waypoint = trial.path[i];
            match convex_hull(&estimate) {
                Ok(hull) => {
                    let (s, normal) = hull_clearance_and_normal(&hull, &waypoint);
                    if s < standoff {
                        waypoint += normal * (standoff - s);
                    }
                }
                Err(_) => {
                    if let Ok(index) = NnIndex::build(&estimate) {
                        let nearest = index.nearest(&waypoint);
                        if nearest.distance < standoff {
                            let obstacle_point = index.point(nearest.index);
                            let away = waypoint - obstacle_point;
                            let dir = if away.norm() > 1e-12 {
                                away.normalize()
                            } else {
                                nalgebra::Vector3::z()
                            };
                            waypoint = obstacle_point + dir * standoff;
                        }
                    }
                }
            }

            // Classification against the *true* geometry.
            for obstacle in &trial.true_obstacles[i] {
                min_clearance = min_clearance.min(signed_clearance(obstacle, &waypoint));
            }
        }

        let outcome = if min_clearance > params.eps_fa {
            AvoidanceOutcome::FullAvoidance
        } else if min_clearance >= -params.eps_ea {
            AvoidanceOutcome::EdgeAvoidance
        } else {
            AvoidanceOutcome::Collision
        };
        match outcome {
            AvoidanceOutcome::FullAvoidance => tally.n_fa += 1,
            AvoidanceOutcome::EdgeAvoidance => tally.n_ea += 1,
            AvoidanceOutcome::Collision => tally.n_co += 1,
        }
        outcomes.push(outcome);
    }

    Ok((tally, outcomes))
}
