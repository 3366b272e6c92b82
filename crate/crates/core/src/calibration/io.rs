//! Calibration result files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FailedView, ViewCalibration};
use crate::geometry::ProjectionMatrix;
use crate::rawio::write_atomic;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub view_index: usize,
    /// Row-major 3×4 projection matrix.
    pub matrix: [f64; 12],
    pub mean_reproj_error: f64,
    pub n_elements_used: usize,
    pub inlier_count: usize,
}

impl CalibrationRecord {
    pub fn from_view(c: &ViewCalibration) -> Self {
        Self {
            view_index: c.view_index,
            matrix: c.matrix.to_row_major(),
            mean_reproj_error: c.mean_reproj_error,
            n_elements_used: c.n_elements_used,
            inlier_count: c.inlier_count(),
        }
    }

    pub fn projection(&self) -> Result<ProjectionMatrix> {
        ProjectionMatrix::from_row_major(&self.matrix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    /// Number of views in the scanned stack, calibrated or not.
    pub n_views: usize,
    pub views: Vec<CalibrationRecord>,
    pub failed: Vec<FailedView>,
}

impl CalibrationFile {
    pub fn new(n_views: usize, cals: &[ViewCalibration], failed: &[FailedView]) -> Self {
        let mut views: Vec<CalibrationRecord> = cals.iter().map(CalibrationRecord::from_view).collect();
        views.sort_by_key(|v| v.view_index);
        let mut failed = failed.to_vec();
        failed.sort_by_key(|f| f.view_index);
        Self { n_views, views, failed }
    }

    /// `(view_index, matrix)` for each calibrated view.
    pub fn matrices(&self) -> Result<Vec<(usize, ProjectionMatrix)>> {
        self.views.iter().map(|v| Ok((v.view_index, v.projection()?))).collect()
    }

    pub fn mean_error(&self) -> f64 {
        if self.views.is_empty() {
            return f64::NAN;
        }
        self.views.iter().map(|v| v.mean_reproj_error).sum::<f64>() / self.views.len() as f64
    }
}

pub fn write_calibration_json(path: &Path, file: &CalibrationFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_calibration_json(path: &Path) -> Result<CalibrationFile> {
    let text = std::fs::read_to_string(path)?;
    let file: CalibrationFile = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for v in &file.views {
        if v.view_index >= file.n_views {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("view_index {} out of range for {} views", v.view_index, file.n_views),
            });
        }
    }
    Ok(file)
}

/// `view_index,mean_reproj_error_px,inlier_count,n_elements_used`
pub fn write_reprojection_csv(path: &Path, file: &CalibrationFile) -> Result<()> {
    let mut out = String::from("view_index,mean_reproj_error_px,inlier_count,n_elements_used\n");
    for v in &file.views {
        let _ = writeln!(
            out,
            "{},{:.6},{},{}",
            v.view_index, v.mean_reproj_error, v.inlier_count, v.n_elements_used
        );
    }
    write_atomic(path, out.as_bytes())
}
