//! Geometry processing for fast digital-twin asset construction and
//! online scene synchronization.
//!
//! The library covers two pipelines:
//!
//! - **Asset construction** (offline): multi-view mask-projection
//!   segmentation, sphere-expansion opening detection with support-plane
//!   denoising, metric-scale calibration from a colored reference cube,
//!   and feature-aware meshing/simplification.
//! - **Synchronization** (online): colored-ICP registration, sliding-window
//!   object tracking against a memory bank of canonical assets, and
//!   asset-based geometry completion.
//!
//! A synthetic scene generator (`synth`) provides labeled oracles for both.

pub mod error;
pub mod filter;
pub mod geom;
pub mod io;
pub mod mesh;
pub mod nn;
pub mod opening;
pub mod projseg;
pub mod register;
pub mod scalecal;
pub mod sphere;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use geom::{Aabb, PointCloud, QuatWxyz, RgbColor, RigidTransform};
pub use nn::NnIndex;
