//! Homogeneous projective geometry for cone-beam views.
//!
//! A view is a 3×4 [`ProjectionMatrix`] taking world points (mm) to detector
//! pixels. Matrices are kept in a canonical scale: the third row's leading
//! 3-vector has unit norm and the left 3×3 block has positive determinant, so
//! the homogeneous depth of a projected point is its distance (mm) along the
//! principal axis.

mod camera;
mod cross_ratio;
mod dlt;
mod pose;

pub use camera::{CameraDecomposition, ProjectionMatrix};
pub use cross_ratio::cross_ratio;
pub use dlt::{dlt_estimate, scatter_is_degenerate, DEGENERATE_RANK_TOL};
pub use pose::{estimate_pose, refine_pose, PoseFit};

use nalgebra::{Vector2, Vector3};

use crate::Result;

/// Homogeneous depth below which a point is treated as lying on the
/// principal plane.
pub const DEPTH_EPS: f64 = 1e-12;

/// Condition number above which the left 3×3 block is considered singular.
pub const MAX_CONDITION: f64 = 1e12;

/// A world point (mm) and its observed detector position (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCorrespondence {
    pub world: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

impl PointCorrespondence {
    pub fn new(world: Vector3<f64>, pixel: Vector2<f64>) -> Self {
        Self { world, pixel }
    }

    pub fn is_finite(&self) -> bool {
        self.world.iter().chain(self.pixel.iter()).all(|v| v.is_finite())
    }
}

/// Euclidean pixel distance between each projected world point and its
/// observation.
pub fn reprojection_error(p: &ProjectionMatrix, corrs: &[PointCorrespondence]) -> Result<Vec<f64>> {
    corrs
        .iter()
        .map(|c| Ok((p.project(&c.world)? - c.pixel).norm()))
        .collect()
}
