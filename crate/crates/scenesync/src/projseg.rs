//! Multi-view mask-projection segmentation: project the scene cloud into
//! each camera, vote against (optionally dilated) 2D masks, and compose the
//! full asset-extraction pipeline.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{statistical_outlier_removal, voxel_downsample};
use crate::geom::{PointCloud, RigidTransform};
use crate::io::MaskImage;
use crate::opening::{detect_opening, remove_support_plane, OpeningParams};

/// A pinhole camera with a world pose.
#[derive(Debug, Clone)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub t_world_cam: RigidTransform,
}

impl PinholeCamera {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::ValidationError(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::ValidationError(
                "image dimensions must be non-zero".into(),
            ));
        }
        Ok(())
    }
}

/// Cameras paired with their 2D segmentation masks, in a fixed order.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub views: Vec<(PinholeCamera, MaskImage)>,
}

impl ViewSet {
    pub fn new(views: Vec<(PinholeCamera, MaskImage)>) -> Result<Self> {
        for (camera, mask) in &views {
            camera.validate()?;
            if camera.width != mask.width || camera.height != mask.height {
                return Err(Error::ValidationError(format!(
                    "mask {}x{} does not match camera {}x{}",
                    mask.width, mask.height, camera.width, camera.height
                )));
            }
        }
        Ok(Self { views })
    }
}

/// Parameters of the stage-1 asset-extraction pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AssetPipelineParams {
    /// Voxel size for the initial downsample, meters.
    pub voxel_size: f64,
    /// Mask dilation radius in pixels.
    pub margin_px: usize,
    /// Fraction of in-frustum views that must vote for a point.
    pub vote_fraction: f64,
    /// Sphere-expansion direction count for opening detection.
    pub opening_k: usize,
    /// Support-plane removal margin, meters.
    pub plane_margin: f64,
    /// Neighbor count for statistical outlier removal.
    pub outlier_k: usize,
    /// Standard-deviation multiplier for the outlier cut.
    pub outlier_std_ratio: f64,
}

impl Default for AssetPipelineParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.003,
            margin_px: 8,
            vote_fraction: 1.0,
            opening_k: 1024,
            plane_margin: 0.005,
            outlier_k: 16,
            outlier_std_ratio: 2.0,
        }
    }
}

/// Morphological dilation of the mask by a disc of radius `margin_px`.
pub fn expand_mask(mask: &MaskImage, margin_px: usize) -> MaskImage {
    if margin_px == 0 {
        return mask.clone();
    }
    let r = margin_px as isize;
    let r2 = (margin_px * margin_px) as isize;
    // Precompute the disc offsets once.
    let mut offsets = Vec::new();
    for dv in -r..=r {
        for du in -r..=r {
            if du * du + dv * dv <= r2 {
                offsets.push((du, dv));
            }
        }
    }
    let mut out = MaskImage::new(mask.width, mask.height);
    for v in 0..mask.height {
        for u in 0..mask.width {
            if !mask.is_set(u, v) {
                continue;
            }
            for &(du, dv) in &offsets {
                let uu = u as isize + du;
                let vv = v as isize + dv;
                if uu >= 0 && vv >= 0 && (uu as usize) < mask.width && (vv as usize) < mask.height
                {
                    out.set(uu as usize, vv as usize, true);
                }
            }
        }
    }
    out
}

/// Projects a world point into the camera. Returns `(u, v, depth)` or
/// `None` when the point is behind the camera or outside the image.
pub fn project_point(camera: &PinholeCamera, p_world: &Point3<f64>) -> Option<(f64, f64, f64)> {
    let p_cam = camera.t_world_cam.inverse().transform_point(p_world);
    if p_cam.z <= 0.0 {
        return None;
    }
    let u = camera.fx * p_cam.x / p_cam.z + camera.cx;
    let v = camera.fy * p_cam.y / p_cam.z + camera.cy;
    if u < 0.0 || v < 0.0 || u >= camera.width as f64 || v >= camera.height as f64 {
        return None;
    }
    Some((u, v, p_cam.z))
}

/// Selects the cloud points that project inside the dilated mask in at
/// least `ceil(vote_fraction × in-frustum views)` of the views that see
/// them. `vote_fraction = 1.0` is a strict per-view intersection.
pub fn segment_by_views(
    cloud: &PointCloud,
    views: &ViewSet,
    margin_px: usize,
    vote_fraction: f64,
) -> Result<Vec<usize>> {
    if views.views.is_empty() {
        return Err(Error::EmptyInput("segmentation needs at least one view"));
    }
    if !(0.0..=1.0).contains(&vote_fraction) {
        return Err(Error::InvalidParameter(format!(
            "vote_fraction must be in [0,1], got {vote_fraction}"
        )));
    }
    let expanded: Vec<MaskImage> = views
        .views
        .iter()
        .map(|(_, m)| expand_mask(m, margin_px))
        .collect();
    let mut selected = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let mut visible = 0usize;
        let mut votes = 0usize;
        for ((camera, _), mask) in views.views.iter().zip(&expanded) {
            if let Some((u, v, _)) = project_point(camera, p) {
                visible += 1;
                if mask.is_set(u as usize, v as usize) {
                    votes += 1;
                }
            }
        }
        if visible == 0 {
            continue;
        }
        let needed = (vote_fraction * visible as f64).ceil().max(1.0) as usize;
        if votes >= needed {
            selected.push(i);
        }
    }
    Ok(selected)
}

/// Full stage-1 object extraction: voxel downsample, multi-view mask
/// segmentation, opening detection, support-plane removal, and a final
/// statistical outlier cut.
pub fn build_asset_pipeline(
    cloud: &PointCloud,
    views: &ViewSet,
    params: &AssetPipelineParams,
) -> Result<PointCloud> {
    let down = voxel_downsample(cloud, params.voxel_size).map_err(|e| e.in_stage("downsample"))?;
    let selected = segment_by_views(&down, views, params.margin_px, params.vote_fraction)
        .map_err(|e| e.in_stage("segment"))?;
    if selected.is_empty() {
        return Err(Error::EmptySegmentation.in_stage("segment"));
    }
    let object = down.select(&selected);
    let opening_params = OpeningParams {
        k: params.opening_k,
        ..OpeningParams::default()
    };
    let object = match detect_opening(&object, &opening_params) {
        Ok(opening) if opening.converged => {
            remove_support_plane(&object, &opening, params.plane_margin)
                .map_err(|e| e.in_stage("denoise"))?
        }
        // No detectable opening (closed object): nothing to filter against.
        Ok(_) => object,
        Err(e) => return Err(e.in_stage("opening")),
    };
    let cleaned = statistical_outlier_removal(&object, params.outlier_k, params.outlier_std_ratio)
        .map_err(|e| e.in_stage("outliers"))?;
    if cleaned.is_empty() {
        return Err(Error::EmptySegmentation.in_stage("outliers"));
    }
    Ok(cleaned)
}
