//! Bead detection in projection images and grouping into element candidates.

mod blob;
mod group;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub use blob::{detect_beads, gaussian_blur};
pub use group::{group_candidates, group_candidates_in_bands};

use crate::geometry::cross_ratio;
use crate::rawio::write_atomic;
use crate::{Error, Image, Result};

/// Smallest accepted projection edge, pixels.
pub const MIN_IMAGE_SIZE: usize = 64;

/// Default collinearity tolerance for element candidates, pixels.
pub const DEFAULT_COLLINEARITY_TOL_PX: f64 = 1.0;

/// Required ratio between the directional bead radius and the median of the
/// other three.
pub const LARGE_BEAD_RATIO: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    pub image: Image,
    pub view_index: usize,
}

impl ProjectionImage {
    pub fn new(image: Image, view_index: usize) -> Result<Self> {
        if image.width() < MIN_IMAGE_SIZE || image.height() < MIN_IMAGE_SIZE {
            return Err(Error::InvalidInput(format!(
                "projection {}x{} is smaller than {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}",
                image.width(),
                image.height()
            )));
        }
        if !image.is_finite() {
            return Err(Error::InvalidInput(format!(
                "projection {view_index} has non-finite pixels"
            )));
        }
        Ok(Self { image, view_index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeadDetection {
    pub center: Vector2<f64>,
    pub radius: f64,
    /// Estimated bead contrast above local background.
    pub score: f64,
}

impl BeadDetection {
    pub fn new(center: Vector2<f64>, radius: f64, score: f64) -> Self {
        Self { center, radius, score }
    }
}

/// Bead appearance relative to background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Beads attenuate: darker than background (normalized transmission).
    Dark,
    /// Beads brighter than background (line integrals).
    Bright,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub min_radius: f64,
    pub max_radius: f64,
    /// Minimum estimated contrast, in image units.
    pub contrast_threshold: f64,
    pub polarity: Polarity,
    /// Search only the top and bottom bands of this fractional height.
    pub roi_band_fraction: Option<f64>,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            min_radius: 1.5,
            max_radius: 10.0,
            contrast_threshold: 0.05,
            polarity: Polarity::Dark,
            roi_band_fraction: Some(0.2),
        }
    }
}

impl DetectParams {
    /// Whole-image search for dark beads.
    pub fn new(min_radius: f64, max_radius: f64, contrast_threshold: f64) -> Self {
        Self {
            min_radius,
            max_radius,
            contrast_threshold,
            polarity: Polarity::Dark,
            roi_band_fraction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementCandidate {
    /// Large bead first, then by increasing distance from it.
    pub detections: [BeadDetection; 4],
    /// RMS perpendicular distance to the fitted line, pixels.
    pub line_residual: f64,
    /// Positions along the fitted line relative to the large bead, pixels.
    pub axial_positions: [f64; 4],
}

impl ElementCandidate {
    pub fn centers(&self) -> [Vector2<f64>; 4] {
        self.detections.map(|d| d.center)
    }
}

pub fn candidate_cross_ratio(c: &ElementCandidate) -> Result<f64> {
    let [a, b, cc, d] = c.axial_positions;
    cross_ratio(a, b, cc, d)
}

/// Detections of one view for the CSV dump.
#[derive(Debug, Clone, Default)]
pub struct ViewDetections {
    pub view_index: usize,
    pub beads: Vec<BeadDetection>,
    pub candidates: Vec<ElementCandidate>,
}

/// Writes `view_index,element_candidate_id,bead_index,x_px,y_px,radius_px,score`
/// rows. Beads not part of any candidate get id and bead index -1.
pub fn write_detection_csv(path: &Path, views: &[ViewDetections]) -> Result<()> {
    let mut out = String::from("view_index,element_candidate_id,bead_index,x_px,y_px,radius_px,score\n");
    for v in views {
        let mut grouped = vec![false; v.beads.len()];
        for (cid, c) in v.candidates.iter().enumerate() {
            for (bi, d) in c.detections.iter().enumerate() {
                if let Some(k) = v.beads.iter().position(|b| b == d) {
                    grouped[k] = true;
                }
                let _ = writeln!(
                    out,
                    "{},{cid},{bi},{:.4},{:.4},{:.4},{:.6}",
                    v.view_index, d.center.x, d.center.y, d.radius, d.score
                );
            }
        }
        for (b, _) in v.beads.iter().zip(&grouped).filter(|(_, g)| !**g) {
            let _ = writeln!(
                out,
                "{},-1,-1,{:.4},{:.4},{:.4},{:.6}",
                v.view_index, b.center.x, b.center.y, b.radius, b.score
            );
        }
    }
    write_atomic(path, out.as_bytes())
}
