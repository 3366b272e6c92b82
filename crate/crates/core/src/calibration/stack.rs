//! Calibration of a full projection stack.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{
    calibrate_view, match_elements, median_intrinsics, pool_intrinsics, FailedView, RansacParams, TrajectoryReport,
    ViewCalibration,
};
use crate::detection::{
    detect_beads, group_candidates_in_bands, DetectParams, Polarity, ProjectionImage, ViewDetections,
    DEFAULT_COLLINEARITY_TOL_PX,
};
use crate::par;
use crate::phantom::{PhantomModel, DEFAULT_CR_MARGIN};
use crate::preprocess::{ProjectionStack, StackKind};
use crate::{Error, Result};

const SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub detection: DetectParams,
    pub collinearity_tol_px: f64,
    /// Largest accepted cross-ratio distance when identifying elements. At a
    /// third of the phantom's descriptor margin, no candidate within it can
    /// be ambiguous.
    pub match_tol: f64,
    pub ransac: RansacParams,
    /// DLT solutions over fewer elements are re-solved with shared intrinsics.
    pub min_dlt_elements: usize,
    /// Re-estimate every pose with the median intrinsics of all views.
    pub pool_intrinsics: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            detection: DetectParams::default(),
            collinearity_tol_px: DEFAULT_COLLINEARITY_TOL_PX,
            match_tol: DEFAULT_CR_MARGIN / 3.0,
            ransac: RansacParams::default(),
            min_dlt_elements: 4,
            pool_intrinsics: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StackCalibration {
    pub views: Vec<ViewCalibration>,
    pub report: TrajectoryReport,
}

impl StackCalibration {
    pub fn failed(&self) -> &[FailedView] {
        &self.report.failed
    }

    pub fn mean_error(&self) -> f64 {
        if self.views.is_empty() {
            return f64::NAN;
        }
        self.views.iter().map(|v| v.mean_reproj_error).sum::<f64>() / self.views.len() as f64
    }
}

/// Bead detection and element grouping on every view.
pub fn detect_stack(stack: &ProjectionStack, params: &DetectParams, collinearity_tol: f64) -> Result<Vec<ViewDetections>> {
    let mut params = *params;
    match stack.kind {
        StackKind::LineIntegral => params.polarity = Polarity::Bright,
        StackKind::Transmittance => params.polarity = Polarity::Dark,
        StackKind::Raw => {}
    }
    par::map_range(stack.len(), |i| {
        let img = ProjectionImage::new(stack.views[i].clone(), i)?;
        let beads = detect_beads(&img, &params)?;
        let candidates = group_candidates_in_bands(&beads, img.image.height(), params.roi_band_fraction, collinearity_tol);
        log::debug!("view={i} beads={} candidates={}", beads.len(), candidates.len());
        Ok(ViewDetections {
            view_index: i,
            beads,
            candidates,
        })
    })
    .into_iter()
    .collect()
}

fn view_seed(seed: u64, view_index: usize) -> u64 {
    seed ^ (view_index as u64).wrapping_mul(SEED_MIX)
}

/// Calibrates every view from its element candidates.
///
/// Every view is first solved by DLT. Views that fail for lack of three
/// consistent elements, and views whose DLT rests on fewer than
/// `min_dlt_elements` elements, are then solved as poses with the median
/// intrinsics of the well-determined views; a weak DLT result is kept when
/// that retry fails. Failing views are reported rather than aborting the
/// stack; only a stack without a single calibrated view is an error.
pub fn calibrate_candidates(
    n_views: usize,
    detections: &[ViewDetections],
    phantom: &PhantomModel,
    config: &CalibrationConfig,
) -> Result<StackCalibration> {
    let attempt = |v: &ViewDetections, k: Option<&Matrix3<f64>>| {
        let matches = match_elements(&v.candidates, phantom, config.match_tol);
        let ransac = RansacParams {
            seed: view_seed(config.ransac.seed, v.view_index),
            ..config.ransac
        };
        calibrate_view(v.view_index, &matches, phantom, &ransac, k)
    };
    let first = par::map_slice(detections, |v| attempt(v, None));

    let mut strong = Vec::new();
    let mut weak = Vec::new();
    let mut retry = Vec::new();
    let mut failed = Vec::new();
    for (v, r) in detections.iter().zip(first) {
        match r {
            Ok(c) if c.n_elements_used >= config.min_dlt_elements => strong.push(c),
            Ok(c) => {
                retry.push(v);
                weak.push(c);
            }
            Err(e @ (Error::TooFewElements { got: 2.., .. } | Error::CalibrationFailed(_))) => {
                retry.push(v);
                failed.push(FailedView {
                    view_index: v.view_index,
                    reason: e.to_string(),
                });
            }
            Err(e) => failed.push(FailedView {
                view_index: v.view_index,
                reason: e.to_string(),
            }),
        }
    }

    let k = if strong.len() >= 3 {
        median_intrinsics(&strong)
    } else {
        median_intrinsics(&[strong.as_slice(), weak.as_slice()].concat())
    };
    let mut cals = strong;
    match k {
        Ok(k) if !retry.is_empty() => {
            let second = par::map_slice(&retry, |v| attempt(v, Some(&k)));
            for (v, r) in retry.iter().zip(second) {
                let first_weak = weak.iter().position(|c| c.view_index == v.view_index);
                match (r, first_weak) {
                    (Ok(c), _) => {
                        failed.retain(|f| f.view_index != v.view_index);
                        cals.push(c);
                    }
                    (Err(_), Some(i)) => cals.push(weak[i].clone()),
                    (Err(e), None) => {
                        if let Some(f) = failed.iter_mut().find(|f| f.view_index == v.view_index) {
                            f.reason = format!("{}; with shared intrinsics: {e}", f.reason);
                        }
                    }
                }
            }
        }
        _ => cals.extend(weak),
    }

    if cals.is_empty() {
        return Err(Error::AllViewsFailed);
    }
    if config.pool_intrinsics {
        let (_, pooled) = pool_intrinsics(&cals)?;
        cals = pooled;
    }
    cals.sort_by_key(|c| c.view_index);
    for f in &failed {
        log::info!("view={} status=failed reason=\"{}\"", f.view_index, f.reason);
    }
    let report = TrajectoryReport::from_calibrations(n_views, &cals, failed)?;
    Ok(StackCalibration { views: cals, report })
}

pub fn calibrate_stack(
    stack: &ProjectionStack,
    phantom: &PhantomModel,
    config: &CalibrationConfig,
) -> Result<StackCalibration> {
    let dets = detect_stack(stack, &config.detection, config.collinearity_tol_px)?;
    calibrate_candidates(stack.len(), &dets, phantom, config)
}
