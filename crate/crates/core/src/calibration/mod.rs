//! Per-view geometric calibration from the marker phantom.
//!
//! Element candidates are identified by cross-ratio, a projection matrix is
//! estimated per view by RANSAC over bead correspondences, and the source
//! positions of all views are summarized as a trajectory report.

mod io;
mod pool;
mod ransac;
mod stack;
mod trajectory;

pub use io::{read_calibration_json, write_calibration_json, write_reprojection_csv, CalibrationFile, CalibrationRecord};
pub use pool::{intrinsic_spread, median_intrinsics, pool_intrinsics, MAX_INTRINSIC_SPREAD};
pub use ransac::{calibrate_view, RansacParams};
pub use stack::{calibrate_candidates, calibrate_stack, detect_stack, CalibrationConfig, StackCalibration};
pub use trajectory::{TrajectoryEntry, TrajectoryReport};

use serde::{Deserialize, Serialize};

use crate::detection::{candidate_cross_ratio, ElementCandidate};
use crate::geometry::{PointCorrespondence, ProjectionMatrix};
use crate::phantom::PhantomModel;

/// Candidate identified as a phantom element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatch {
    pub candidate: ElementCandidate,
    pub element_id: u32,
    pub cr_distance: f64,
}

impl ElementMatch {
    /// Bead correspondences, large bead first.
    pub fn correspondences(&self, phantom: &PhantomModel) -> Vec<PointCorrespondence> {
        let Some(e) = phantom.element(self.element_id) else {
            return Vec::new();
        };
        e.bead_centers
            .iter()
            .zip(&self.candidate.detections)
            .map(|(w, d)| PointCorrespondence::new(*w, d.center))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewCalibration {
    pub view_index: usize,
    pub matrix: ProjectionMatrix,
    pub inlier_correspondences: Vec<PointCorrespondence>,
    pub mean_reproj_error: f64,
    pub n_elements_used: usize,
    /// Phantom elements contributing inliers, ascending.
    pub element_ids: Vec<u32>,
    /// Solved for pose only, with intrinsics supplied.
    pub fixed_intrinsics: bool,
}

impl ViewCalibration {
    pub fn inlier_count(&self) -> usize {
        self.inlier_correspondences.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedView {
    pub view_index: usize,
    pub reason: String,
}

/// Identifies candidates by nearest phantom cross-ratio.
///
/// A candidate is accepted when its nearest descriptor is within `tol` and
/// the second nearest is at least `2·tol` away. Each element is then
/// assigned at most once, to the closest accepted candidate.
pub fn match_elements(cands: &[ElementCandidate], phantom: &PhantomModel, tol: f64) -> Vec<ElementMatch> {
    let mut accepted: Vec<ElementMatch> = Vec::new();
    for (ci, c) in cands.iter().enumerate() {
        let Ok(cr) = candidate_cross_ratio(c) else {
            log::debug!("candidate={ci} dropped=degenerate");
            continue;
        };
        let mut dists: Vec<(f64, u32)> = phantom
            .descriptor_table()
            .iter()
            .map(|(&id, &d)| ((cr - d).abs(), id))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some(&(best, id)) = dists.first() else {
            continue;
        };
        let second = dists.get(1).map_or(f64::INFINITY, |d| d.0);
        if best > tol {
            log::debug!("candidate={ci} cr={cr:.4} dropped=no_descriptor nearest={best:.4}");
            continue;
        }
        if second < 2.0 * tol {
            log::debug!("candidate={ci} cr={cr:.4} dropped=ambiguous second={second:.4}");
            continue;
        }
        accepted.push(ElementMatch {
            candidate: c.clone(),
            element_id: id,
            cr_distance: best,
        });
    }
    accepted.sort_by(|a, b| a.cr_distance.total_cmp(&b.cr_distance));
    let mut used = Vec::new();
    accepted.retain(|m| {
        if used.contains(&m.element_id) {
            false
        } else {
            used.push(m.element_id);
            true
        }
    });
    accepted.sort_by_key(|m| m.element_id);
    accepted
}
