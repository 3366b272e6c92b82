//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use fieldct::calibration::ViewCalibration;
use fieldct::detection::{group_candidates_in_bands, ViewDetections, DEFAULT_COLLINEARITY_TOL_PX};
use fieldct::phantom::PhantomModel;
use fieldct::simulator::{synthetic_detections, true_views, SyntheticView, TrajectoryConfig, TrueView, SCENARIO_BAND_FRACTION};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct SyntheticScan {
    pub views: Vec<TrueView>,
    pub synthetic: Vec<SyntheticView>,
    pub detections: Vec<ViewDetections>,
}

/// Projected bead centers of every view with Gaussian noise, grouped into
/// element candidates.
pub fn synthetic_scan(model: &PhantomModel, cfg: &TrajectoryConfig, sigma_px: f64, seed: u64) -> SyntheticScan {
    let views = true_views(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let synthetic: Vec<SyntheticView> = views
        .iter()
        .map(|v| synthetic_detections(model, &v.matrix, cfg.width, cfg.height, sigma_px, &mut rng).unwrap())
        .collect();
    let detections = synthetic.iter().enumerate().map(|(i, s)| grouped(i, s, cfg.height)).collect();
    SyntheticScan {
        views,
        synthetic,
        detections,
    }
}

/// Groups the way stack detection does for scenario renders: top and bottom
/// halves separately.
pub fn grouped(view_index: usize, s: &SyntheticView, height: usize) -> ViewDetections {
    ViewDetections {
        view_index,
        beads: s.detections.clone(),
        candidates: group_candidates_in_bands(
            &s.detections,
            height,
            Some(SCENARIO_BAND_FRACTION),
            DEFAULT_COLLINEARITY_TOL_PX,
        ),
    }
}

/// Keeps only the detections of the listed elements.
pub fn restrict(s: &SyntheticView, ids: &[u32]) -> SyntheticView {
    let mut out = SyntheticView::default();
    for (d, t) in s.detections.iter().zip(&s.truth) {
        if ids.contains(&t.0) {
            out.detections.push(*d);
            out.truth.push(*t);
        }
    }
    out.fully_visible = s.fully_visible.iter().copied().filter(|id| ids.contains(id)).collect();
    out
}

/// Inlier correspondences pairing a detection of one element with a bead of
/// another.
pub fn misidentified(cal: &ViewCalibration, s: &SyntheticView, model: &PhantomModel) -> usize {
    cal.inlier_correspondences
        .iter()
        .filter(|c| {
            let k = s.detections.iter().position(|d| d.center == c.pixel).expect("inlier comes from a detection");
            let owner = model
                .elements()
                .iter()
                .find(|e| e.bead_centers.contains(&c.world))
                .expect("inlier world point is a phantom bead");
            owner.id != s.truth[k].0
        })
        .count()
}
