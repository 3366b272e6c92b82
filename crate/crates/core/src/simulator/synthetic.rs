//! Bead detections computed directly from geometry, bypassing images.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::detection::BeadDetection;
use crate::geometry::ProjectionMatrix;
use crate::phantom::PhantomModel;
use crate::Result;

#[derive(Debug, Clone, Default)]
pub struct SyntheticView {
    pub detections: Vec<BeadDetection>,
    /// `(element id, bead index)` that produced each detection.
    pub truth: Vec<(u32, usize)>,
    /// Elements with all four beads detected.
    pub fully_visible: Vec<u32>,
}

/// Projected bead centers with isotropic Gaussian noise of `sigma_px`.
///
/// Beads whose projected disk leaves the detector are dropped, as are both
/// beads of any pair whose disks come within one pixel of touching, since
/// an image detector would merge them.
pub fn synthetic_detections(
    model: &PhantomModel,
    p: &ProjectionMatrix,
    width: usize,
    height: usize,
    sigma_px: f64,
    rng: &mut impl Rng,
) -> Result<SyntheticView> {
    let (fx, _) = p.decompose()?.focal_lengths();
    let mut beads = Vec::new();
    for e in model.elements() {
        for (b, (c, r)) in e.bead_centers.iter().zip(&e.bead_radii).enumerate() {
            let q = p.project(c)?;
            let s = p.homogeneous(c).z;
            beads.push((e.id, b, q, r * fx / s));
        }
    }
    let keep: Vec<bool> = beads
        .iter()
        .enumerate()
        .map(|(i, &(_, _, q, r))| {
            let inside = q.x >= r && q.y >= r && q.x <= width as f64 - 1.0 - r && q.y <= height as f64 - 1.0 - r;
            let clear = beads
                .iter()
                .enumerate()
                .all(|(j, &(_, _, q2, r2))| i == j || (q - q2).norm() > r + r2 + 1.0);
            inside && clear
        })
        .collect();
    let noise = Normal::new(0.0, sigma_px.max(0.0)).expect("finite sigma");
    let mut out = SyntheticView::default();
    for (&(id, b, q, r), &k) in beads.iter().zip(&keep) {
        if !k {
            continue;
        }
        let jitter = nalgebra::Vector2::new(noise.sample(rng), noise.sample(rng));
        out.detections.push(BeadDetection::new(q + jitter, r, 1.0));
        out.truth.push((id, b));
    }
    for e in model.elements() {
        if out.truth.iter().filter(|(id, _)| *id == e.id).count() == 4 {
            out.fully_visible.push(e.id);
        }
    }
    Ok(out)
}
