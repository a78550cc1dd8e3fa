//! Metric-scale calibration from a colored reference cube.
//!
//! A reference cube of known size is placed in the scene; its points are
//! detected by color (a cascade of three masks), the visible square face is
//! measured by robust percentile spans along cube-aligned axes, and the
//! ratio of real to measured edge length converts reconstruction units to
//! meters.

use nalgebra::Vector3;
#[cfg(test)]
use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, RgbColor};

/// Color masks and acceptance range for reference-cube detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GreenThresholds {
    /// Channel-threshold mask: g >= g_min, r <= r_max, b <= b_max.
    pub g_min: f64,
    pub r_max: f64,
    pub b_max: f64,
    /// Dominance mask: g >= ratio * r and g >= ratio * b.
    pub dominance_ratio: f64,
    /// HSV mask: hue within [hue_min_deg, hue_max_deg], saturation >= sat_min.
    pub hue_min_deg: f64,
    pub hue_max_deg: f64,
    pub sat_min: f64,
    /// Accepted detection size range.
    pub count_min: usize,
    pub count_max: usize,
    /// Spatial refinement: drop points beyond this many standard deviations
    /// along any principal axis of the selected set.
    pub pca_sigma: f64,
}

impl Default for GreenThresholds {
    fn default() -> Self {
        Self {
            g_min: 0.5,
            r_max: 0.35,
            b_max: 0.35,
            dominance_ratio: 1.4,
            hue_min_deg: 90.0,
            hue_max_deg: 150.0,
            sat_min: 0.4,
            count_min: 1000,
            count_max: 50_000,
            pca_sigma: 3.0,
        }
    }
}

/// Which mask in the cascade produced the accepted detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMethod {
    Threshold,
    Dominance,
    Hsv,
}

/// Accepted reference-cube detection.
#[derive(Debug, Clone)]
pub struct GreenDetection {
    pub method_used: GreenMethod,
    /// Sorted indices into the input cloud.
    pub indices: Vec<usize>,
    pub count: usize,
}

/// Result of the scale estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleEstimate {
    /// Meters per reconstruction unit.
    pub scale_factor: f64,
    /// The four measured edge lengths, in reconstruction units.
    pub edge_lengths: [f64; 4],
    pub cube_size_m: f64,
}

fn threshold_mask(c: &RgbColor, t: &GreenThresholds) -> bool {
    c.g >= t.g_min && c.r <= t.r_max && c.b <= t.b_max
}

fn dominance_mask(c: &RgbColor, t: &GreenThresholds) -> bool {
    c.g >= t.dominance_ratio * c.r && c.g >= t.dominance_ratio * c.b
}

/// Hue in degrees [0, 360) and saturation (max-min)/max; gray has
/// saturation 0 and an arbitrary hue of 0.
fn hue_saturation(c: &RgbColor) -> (f64, f64) {
    let max = c.r.max(c.g).max(c.b);
    let min = c.r.min(c.g).min(c.b);
    let delta = max - min;
    if max <= 0.0 || delta <= 0.0 {
        return (0.0, 0.0);
    }
    let hue = if max == c.r {
        60.0 * ((c.g - c.b) / delta)
    } else if max == c.g {
        60.0 * ((c.b - c.r) / delta + 2.0)
    } else {
        60.0 * ((c.r - c.g) / delta + 4.0)
    };
    (hue.rem_euclid(360.0), delta / max)
}

fn hsv_mask(c: &RgbColor, t: &GreenThresholds) -> bool {
    let (hue, sat) = hue_saturation(c);
    hue >= t.hue_min_deg && hue <= t.hue_max_deg && sat >= t.sat_min
}

/// Drops selected points beyond `sigma` standard deviations along any
/// principal axis of the selection.
fn pca_refine(cloud: &PointCloud, indices: Vec<usize>, sigma: f64) -> Vec<usize> {
    if indices.len() < 2 {
        return indices;
    }
    let n = indices.len() as f64;
    let mean: Vector3<f64> =
        indices.iter().map(|&i| cloud.points[i].coords).sum::<Vector3<f64>>() / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for &i in &indices {
        let d = cloud.points[i].coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let limits: Vec<(Vector3<f64>, f64)> = (0..3)
        .map(|k| {
            let axis = eig.eigenvectors.column(k).into_owned();
            let sd = eig.eigenvalues[k].max(0.0).sqrt();
            (axis, sigma * sd + 1e-12)
        })
        .collect();
    indices
        .into_iter()
        .filter(|&i| {
            let d = cloud.points[i].coords - mean;
            limits.iter().all(|(axis, lim)| d.dot(axis).abs() <= *lim)
        })
        .collect()
}

/// Detects the reference cube by color.
///
/// The three masks are tried in order (channel thresholds, green dominance,
/// HSV); each selection is spatially refined by the PCA sigma clip, and the
/// first mask whose refined count falls inside the accepted range wins.
pub fn detect_green(cloud: &PointCloud, thresholds: &GreenThresholds) -> Result<GreenDetection> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot detect the reference cube in an empty cloud"));
    }
    let Some(colors) = cloud.colors.as_ref() else {
        return Err(Error::InvalidParameter(
            "reference-cube detection needs point colors".into(),
        ));
    };

    let masks: [(GreenMethod, fn(&RgbColor, &GreenThresholds) -> bool); 3] = [
        (GreenMethod::Threshold, threshold_mask),
        (GreenMethod::Dominance, dominance_mask),
        (GreenMethod::Hsv, hsv_mask),
    ];
    let mut counts = [0usize; 3];
    for (m, (method, mask)) in masks.iter().enumerate() {
        let selected: Vec<usize> = colors
            .iter()
            .enumerate()
            .filter(|(_, c)| mask(c, thresholds))
            .map(|(i, _)| i)
            .collect();
        let refined = pca_refine(cloud, selected, thresholds.pca_sigma);
        counts[m] = refined.len();
        if refined.len() >= thresholds.count_min && refined.len() <= thresholds.count_max {
            return Ok(GreenDetection {
                method_used: *method,
                count: refined.len(),
                indices: refined,
            });
        }
    }
    Err(Error::DetectionFailed {
        threshold: counts[0],
        dominance: counts[1],
        hsv: counts[2],
    })
}

/// Linear-interpolation percentile of an unsorted slice, p in [0, 100].
fn percentile(values: &mut [f64], p: f64) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let pos = p / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] * (1.0 - frac) + values[hi] * frac
}

/// The 2.5..97.5 percentile span of a uniform sample covers 95% of the true
/// extent; dividing by this factor removes the systematic shrinkage.
const PERCENTILE_COVERAGE: f64 = 0.95;

/// Andrew's monotone chain; returns hull vertices counter-clockwise.
fn convex_hull_2d(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = pts.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Measures the four edge lengths of the cube's visible square face.
///
/// The face plane comes from PCA (two largest principal directions). PCA
/// alone cannot fix the in-plane rotation of a square (its covariance is
/// isotropic), so the in-plane axes are aligned to the minimum-area
/// bounding rectangle of the projected convex hull. Each axis then yields
/// two edge estimates, one per half-plane split at the median of the other
/// coordinate, measured as the shrinkage-corrected 2.5..97.5 percentile
/// span.
pub fn estimate_cube_edges(green: &PointCloud) -> Result<[f64; 4]> {
    if green.is_empty() {
        return Err(Error::EmptyInput("no points to measure the reference cube from"));
    }
    if green.len() < 10 {
        return Err(Error::TooSparse {
            got: green.len(),
            min: 10,
        });
    }
    let n = green.len() as f64;
    let mean: Vector3<f64> = green.points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in &green.points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda0 = eig.eigenvalues[order[0]].max(0.0);
    let lambda1 = eig.eigenvalues[order[1]].max(0.0);
    if lambda0 <= 0.0 || lambda1 / lambda0 < 1e-9 {
        return Err(Error::DegenerateInput(
            "reference-cube points are collinear; cannot span a face".into(),
        ));
    }
    let u = eig.eigenvectors.column(order[0]).into_owned();
    let v = eig.eigenvectors.column(order[1]).into_owned();

    let projected: Vec<(f64, f64)> = green
        .points
        .iter()
        .map(|p| {
            let d = p.coords - mean;
            (d.dot(&u), d.dot(&v))
        })
        .collect();

    // In-plane alignment: the minimum-area bounding rectangle over the
    // convex hull has one side flush with a hull edge.
    let hull = convex_hull_2d(&projected);
    let mut best_angle = 0.0;
    let mut best_area = f64::INFINITY;
    for w in 0..hull.len() {
        let a = hull[w];
        let b = hull[(w + 1) % hull.len()];
        let angle = (b.1 - a.1).atan2(b.0 - a.0);
        let (sin, cos) = angle.sin_cos();
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &hull {
            let rx = x * cos + y * sin;
            let ry = -x * sin + y * cos;
            min_x = min_x.min(rx);
            max_x = max_x.max(rx);
            min_y = min_y.min(ry);
            max_y = max_y.max(ry);
        }
        let area = (max_x - min_x) * (max_y - min_y);
        if area < best_area {
            best_area = area;
            best_angle = angle;
        }
    }
    let (sin, cos) = best_angle.sin_cos();
    let aligned: Vec<(f64, f64)> = projected
        .iter()
        .map(|&(x, y)| (x * cos + y * sin, -x * sin + y * cos))
        .collect();

    let span = |values: &mut Vec<f64>| -> f64 {
        let hi = percentile(values, 97.5);
        let lo = percentile(values, 2.5);
        (hi - lo) / PERCENTILE_COVERAGE
    };
    let mut edges = [0.0; 4];
    for (slot, measure_x) in [(0, true), (2, false)] {
        // Split at the median of the other coordinate so both halves are
        // populated even if the face is off-center.
        let mut other: Vec<f64> = aligned
            .iter()
            .map(|&(x, y)| if measure_x { y } else { x })
            .collect();
        let split = percentile(&mut other, 50.0);
        let mut low_half = Vec::new();
        let mut high_half = Vec::new();
        for &(x, y) in &aligned {
            let (m, o) = if measure_x { (x, y) } else { (y, x) };
            if o <= split {
                low_half.push(m);
            } else {
                high_half.push(m);
            }
        }
        if low_half.len() < 2 || high_half.len() < 2 {
            return Err(Error::DegenerateInput(
                "a half-plane of the reference-cube face is empty".into(),
            ));
        }
        edges[slot] = span(&mut low_half);
        edges[slot + 1] = span(&mut high_half);
    }
    Ok(edges)
}

/// scale = real cube size / mean measured edge length.
pub fn scale_factor(edges: &[f64; 4], cube_size_m: f64) -> Result<ScaleEstimate> {
    if cube_size_m <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "cube size must be positive, got {cube_size_m}"
        )));
    }
    if edges.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "edge lengths must be positive, got {edges:?}"
        )));
    }
    let mean = edges.iter().sum::<f64>() / edges.len() as f64;
    Ok(ScaleEstimate {
        scale_factor: cube_size_m / mean,
        edge_lengths: *edges,
        cube_size_m,
    })
}

/// Multiplies all coordinates by the scale factor; colors, normals, and
/// labels are untouched.
pub fn apply_scale(cloud: &PointCloud, estimate: &ScaleEstimate) -> PointCloud {
    cloud.scaled(estimate.scale_factor)
}

/// Convenience: detection, edge measurement, and scale in one call.
pub fn calibrate_scale(
    cloud: &PointCloud,
    thresholds: &GreenThresholds,
    cube_size_m: f64,
) -> Result<ScaleEstimate> {
    let detection = detect_green(cloud, thresholds).map_err(|e| e.in_stage("detect_green"))?;
    let green = cloud.select(&detection.indices);
    let edges = estimate_cube_edges(&green).map_err(|e| e.in_stage("estimate_cube_edges"))?;
    scale_factor(&edges, cube_size_m).map_err(|e| e.in_stage("scale_factor"))
}
