//! The bead calibration phantom.
//!
//! Each [`CalibrationElement`] is a rigid stick carrying four beads on a
//! line; the bead nearest one end is twice the size of the others and fixes
//! the stick's direction. The cross-ratio of the four axial bead positions,
//! taken large-bead-first, identifies the stick in any projection.

mod extract;
mod file;
mod generate;

pub use extract::{
    extract_reference_beads, fit_elements_to_beads, FitConstraints, ReferenceBead, ReferenceVolume,
};
pub use file::{read_phantom, write_phantom, PHANTOM_FILE_VERSION};
pub use generate::{generate_phantom, PhantomDesign};

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::geometry::cross_ratio;
use crate::{Error, Result};

/// Maximum distance (mm) of any bead center from the element's best-fit line.
pub const COLLINEARITY_TOL_MM: f64 = 1e-6;

/// Default minimum separation between element cross-ratios.
pub const DEFAULT_CR_MARGIN: f64 = 0.05;

/// Best-fit line through points: centroid and unit direction of largest spread.
pub(crate) fn fit_line(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut scatter = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - mean;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let i = eig.eigenvalues.imax();
    (mean, eig.eigenvectors.column(i).normalize())
}

pub(crate) fn line_distance(p: &Vector3<f64>, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    let d = p - origin;
    (d - dir * d.dot(dir)).norm()
}

/// One bead stick in the phantom frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationElement {
    pub id: u32,
    /// Bead centers (mm), large directional bead first.
    pub bead_centers: [Vector3<f64>; 4],
    pub bead_radii: [f64; 4],
}

impl CalibrationElement {
    /// Unit axis pointing from the large bead toward the far end.
    pub fn axis(&self) -> Vector3<f64> {
        let (_, dir) = fit_line(&self.bead_centers);
        if dir.dot(&(self.bead_centers[3] - self.bead_centers[0])) < 0.0 {
            -dir
        } else {
            dir
        }
    }

    /// Signed positions of the beads along [`axis`](Self::axis), large bead at 0.
    pub fn axial_positions(&self) -> [f64; 4] {
        let axis = self.axis();
        let o = self.bead_centers[0];
        self.bead_centers.map(|c| (c - o).dot(&axis))
    }

    /// Largest bead-center distance from the best-fit line.
    pub fn line_residual(&self) -> f64 {
        let (o, dir) = fit_line(&self.bead_centers);
        self.bead_centers
            .iter()
            .map(|c| line_distance(c, &o, &dir))
            .fold(0.0, f64::max)
    }

    pub fn cross_ratio(&self) -> Result<f64> {
        let [a, b, c, d] = self.axial_positions();
        cross_ratio(a, b, c, d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::InvalidInput(format!("element {}: {why}", self.id)));
        if !self
            .bead_centers
            .iter()
            .all(|c| c.iter().all(|v| v.is_finite()))
        {
            return bad("non-finite bead center".into());
        }
        let residual = self.line_residual();
        if residual > COLLINEARITY_TOL_MM {
            return bad(format!("beads not collinear (residual {residual:e} mm)"));
        }
        let r = self.bead_radii;
        if !(r.iter().all(|&v| v > 0.0) && r[1..].iter().all(|&v| r[0] > v)) {
            return bad("first bead must be the strictly largest".into());
        }
        let max_r = r.iter().cloned().fold(0.0, f64::max);
        let pos = self.axial_positions();
        for w in pos.windows(2) {
            if w[1] - w[0] < 2.0 * max_r {
                return bad(format!("bead gap {:.3} mm below {:.3} mm", w[1] - w[0], 2.0 * max_r));
            }
        }
        Ok(())
    }
}

/// The full phantom: elements plus their cross-ratio descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomModel {
    elements: Vec<CalibrationElement>,
    descriptors: BTreeMap<u32, f64>,
    pub frame_note: String,
}

impl PhantomModel {
    /// Validates every element and computes the descriptor table.
    pub fn new(elements: Vec<CalibrationElement>, frame_note: impl Into<String>) -> Result<Self> {
        if elements.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a phantom needs at least 2 elements, got {}",
                elements.len()
            )));
        }
        let mut descriptors = BTreeMap::new();
        for e in &elements {
            e.validate()?;
            if descriptors.insert(e.id, e.cross_ratio()?).is_some() {
                return Err(Error::InvalidInput(format!("duplicate element id {}", e.id)));
            }
        }
        Ok(Self {
            elements,
            descriptors,
            frame_note: frame_note.into(),
        })
    }

    pub fn elements(&self) -> &[CalibrationElement] {
        &self.elements
    }

    pub fn element(&self, id: u32) -> Option<&CalibrationElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    /// Element id → cross-ratio.
    pub fn descriptor_table(&self) -> &BTreeMap<u32, f64> {
        &self.descriptors
    }

    /// Smallest pairwise cross-ratio separation.
    pub fn min_descriptor_separation(&self) -> f64 {
        let mut v: Vec<f64> = self.descriptors.values().cloned().collect();
        v.sort_by(f64::total_cmp);
        v.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_margin(&self, margin: f64) -> Result<()> {
        let sep = self.min_descriptor_separation();
        if sep < margin {
            return Err(Error::InvalidInput(format!(
                "cross-ratio separation {sep:.4} below margin {margin}"
            )));
        }
        Ok(())
    }
}
