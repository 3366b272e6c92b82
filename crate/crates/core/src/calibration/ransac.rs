//! Robust single-view projection matrix estimation.

use nalgebra::Matrix3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ElementMatch, ViewCalibration};
use crate::geometry::{dlt_estimate, estimate_pose, PointCorrespondence, ProjectionMatrix};
use crate::phantom::PhantomModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub n_iter: usize,
    /// Reprojection error threshold for inliers, pixels.
    pub inlier_px: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            n_iter: 500,
            inlier_px: 2.0,
            seed: 0,
        }
    }
}

/// Inlier beads an element needs to stay in the final fit.
const MIN_BEADS_PER_ELEMENT: usize = 3;
const MIN_INLIERS: usize = 6;
const REFIT_ROUNDS: usize = 5;

struct Group {
    id: u32,
    corrs: Vec<PointCorrespondence>,
}

/// Reprojection error per correspondence; infinite behind the source.
fn errors(p: &ProjectionMatrix, corrs: &[PointCorrespondence]) -> Vec<f64> {
    corrs
        .iter()
        .map(|c| p.project(&c.world).map_or(f64::INFINITY, |q| (q - c.pixel).norm()))
        .collect()
}

/// Element subsets to fit hypotheses from: every subset of size `r` when
/// there are at most `n_iter` of them, otherwise `n_iter` random ones.
fn element_samples(n: usize, r: usize, n_iter: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut total: usize = 1;
    for i in 0..r {
        total = total.saturating_mul(n - i) / (i + 1);
    }
    if total > n_iter {
        return (0..n_iter).map(|_| sample(rng, n, r).into_vec()).collect();
    }
    let mut out = Vec::with_capacity(total);
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..r).rev().find(|&i| idx[i] < n - r + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn fit(corrs: &[PointCorrespondence], k: Option<&Matrix3<f64>>) -> Option<ProjectionMatrix> {
    match k {
        None => dlt_estimate(corrs).ok(),
        Some(k) => estimate_pose(k, corrs).ok().map(|p| p.matrix(k)),
    }
}

/// Inliers of `p`, restricted to elements that keep enough inlier beads.
fn consensus(p: &ProjectionMatrix, groups: &[Group], inlier_px: f64) -> (Vec<(u32, Vec<PointCorrespondence>)>, f64) {
    let mut kept = Vec::new();
    let mut err_sum = 0.0;
    for g in groups {
        let errs = errors(p, &g.corrs);
        let inl: Vec<PointCorrespondence> = g
            .corrs
            .iter()
            .zip(&errs)
            .filter(|(_, e)| **e <= inlier_px)
            .map(|(c, _)| *c)
            .collect();
        if inl.len() >= MIN_BEADS_PER_ELEMENT {
            err_sum += errs.iter().filter(|e| **e <= inlier_px).sum::<f64>();
            kept.push((g.id, inl));
        }
    }
    (kept, err_sum)
}

/// Estimates the projection matrix of one view from identified elements.
///
/// Without `intrinsics` a full DLT needs beads of at least three elements:
/// the four collinear beads of an element fix only five of the eleven
/// degrees of freedom. With `intrinsics`, two elements suffice for the
/// six-parameter pose. Each hypothesis is fit to all beads of a minimal set of
/// elements (exhaustively when the subsets are few) and scored by
/// inlier count (ties by summed error); the winner is refit on its inliers
/// until the inlier set is stable. Elements left with fewer than three inlier
/// beads are discarded, which keeps a misidentified element out of the fit.
pub fn calibrate_view(
    view_index: usize,
    matches: &[ElementMatch],
    phantom: &PhantomModel,
    ransac: &RansacParams,
    intrinsics: Option<&Matrix3<f64>>,
) -> Result<ViewCalibration> {
    let groups: Vec<Group> = matches
        .iter()
        .map(|m| Group {
            id: m.element_id,
            corrs: m.correspondences(phantom),
        })
        .filter(|g| g.corrs.len() == 4)
        .collect();
    let required = if intrinsics.is_some() { 2 } else { 3 };
    if groups.len() < 2 || groups.len() < required {
        return Err(Error::TooFewElements {
            required,
            got: groups.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(ransac.seed);
    let mut best: Option<(usize, f64, ProjectionMatrix)> = None;
    for subset in element_samples(groups.len(), required, ransac.n_iter.max(1), &mut rng) {
        let corrs: Vec<PointCorrespondence> = subset.iter().flat_map(|&g| groups[g].corrs.iter().copied()).collect();
        let Some(p) = fit(&corrs, intrinsics) else {
            continue;
        };
        let (kept, err_sum) = consensus(&p, &groups, ransac.inlier_px);
        if kept.len() < required {
            continue;
        }
        let count: usize = kept.iter().map(|(_, c)| c.len()).sum();
        let better = best
            .as_ref()
            .is_none_or(|(bc, be, _)| count > *bc || (count == *bc && err_sum < *be));
        if better {
            best = Some((count, err_sum, p));
        }
    }
    let (_, _, mut p) = best.ok_or_else(|| {
        Error::CalibrationFailed(format!("no hypothesis reached consensus over {} elements", required))
    })?;

    let mut kept = Vec::new();
    for _ in 0..REFIT_ROUNDS {
        let (next, _) = consensus(&p, &groups, ransac.inlier_px);
        if next.len() < required {
            return Err(Error::CalibrationFailed(format!(
                "only {} elements keep {MIN_BEADS_PER_ELEMENT} inlier beads",
                next.len()
            )));
        }
        let corrs: Vec<PointCorrespondence> = next.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        let refit = fit(&corrs, intrinsics)
            .ok_or_else(|| Error::CalibrationFailed("degenerate final fit".into()))?;
        let stable = next == kept;
        p = refit;
        kept = next;
        if stable {
            break;
        }
    }
    // final inlier set under the final matrix
    let (kept, _) = consensus(&p, &groups, ransac.inlier_px);
    let inliers: Vec<PointCorrespondence> = kept.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    if inliers.len() < MIN_INLIERS || kept.len() < required {
        return Err(Error::CalibrationFailed(format!(
            "final consensus has {} inliers over {} elements",
            inliers.len(),
            kept.len()
        )));
    }
    let errs = errors(&p, &inliers);
    let mut element_ids: Vec<u32> = kept.iter().map(|(id, _)| *id).collect();
    element_ids.sort_unstable();
    Ok(ViewCalibration {
        view_index,
        matrix: p,
        mean_reproj_error: errs.iter().sum::<f64>() / errs.len() as f64,
        n_elements_used: element_ids.len(),
        element_ids,
        inlier_correspondences: inliers,
        fixed_intrinsics: intrinsics.is_some(),
    })
}
