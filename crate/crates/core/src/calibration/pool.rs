//! Shared intrinsics across views of a rigid source–detector assembly.

use nalgebra::Matrix3;

use super::ViewCalibration;
use crate::geometry::{refine_pose, reprojection_error};
use crate::{Error, Result};

/// Largest accepted (P90 − P10) / median of the per-view focal lengths.
pub const MAX_INTRINSIC_SPREAD: f64 = 0.05;

const REFINE_MAX_ITER: usize = 50;
const REFINE_GRAD_TOL: f64 = 1e-10;

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn intrinsics_of(cals: &[ViewCalibration]) -> Result<Vec<Matrix3<f64>>> {
    if cals.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "pooling intrinsics needs at least 3 calibrated views, got {}",
            cals.len()
        )));
    }
    cals.iter().map(|c| c.matrix.decompose().map(|d| d.intrinsics)).collect()
}

fn sorted_entry(ks: &[Matrix3<f64>], r: usize, c: usize) -> Vec<f64> {
    let mut v: Vec<f64> = ks.iter().map(|k| k[(r, c)]).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Entrywise median of the decomposed intrinsics of at least three views.
pub fn median_intrinsics(cals: &[ViewCalibration]) -> Result<Matrix3<f64>> {
    let ks = intrinsics_of(cals)?;
    let mut k = Matrix3::identity();
    for (r, c) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2)] {
        k[(r, c)] = percentile(&sorted_entry(&ks, r, c), 0.5);
    }
    Ok(k)
}

/// Relative (P90 − P10) / median spread of fx and fy.
pub fn intrinsic_spread(cals: &[ViewCalibration]) -> Result<(f64, f64)> {
    let ks = intrinsics_of(cals)?;
    let spread = |r: usize, c: usize| {
        let v = sorted_entry(&ks, r, c);
        (percentile(&v, 0.9) - percentile(&v, 0.1)) / percentile(&v, 0.5)
    };
    Ok((spread(0, 0), spread(1, 1)))
}

/// Replaces per-view intrinsics by their median and re-estimates each view's
/// pose against its inlier correspondences. Fails when the focal lengths
/// spread by more than [`MAX_INTRINSIC_SPREAD`].
pub fn pool_intrinsics(cals: &[ViewCalibration]) -> Result<(Matrix3<f64>, Vec<ViewCalibration>)> {
    let (sx, sy) = intrinsic_spread(cals)?;
    for (name, spread) in [("fx", sx), ("fy", sy)] {
        if spread > MAX_INTRINSIC_SPREAD {
            return Err(Error::PoolingFailed(format!(
                "{name} spread {:.1}% exceeds {:.1}%",
                100.0 * spread,
                100.0 * MAX_INTRINSIC_SPREAD
            )));
        }
    }
    let k = median_intrinsics(cals)?;
    let updated = cals
        .iter()
        .map(|c| -> Result<ViewCalibration> {
            let d = c.matrix.decompose()?;
            let t = -(d.rotation * d.center);
            let fit = refine_pose(&k, &d.rotation, &t, &c.inlier_correspondences, REFINE_MAX_ITER, REFINE_GRAD_TOL);
            let matrix = fit.matrix(&k);
            let errs = reprojection_error(&matrix, &c.inlier_correspondences)?;
            Ok(ViewCalibration {
                matrix,
                mean_reproj_error: errs.iter().sum::<f64>() / errs.len() as f64,
                fixed_intrinsics: true,
                ..c.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((k, updated))
}
