//! Source trajectory diagnostics: rotation axis, angles, circle residuals.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{FailedView, ViewCalibration};
use crate::rawio::write_atomic;
use crate::reconstruction::ViewGeometry;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub view_index: usize,
    pub source_mm: Vector3<f64>,
    /// Angle about the axis relative to the first calibrated view, in `[0, 2π)`.
    pub angle_rad: f64,
    /// Angle step from the previous calibrated view, in `(-π, π]`; the first
    /// entry holds the step closing the revolution.
    pub d_angle_rad: f64,
    /// Distance from the fitted circle, combining radial and out-of-plane
    /// deviation.
    pub circle_residual_mm: f64,
    /// Distance of the source from the fitted axis.
    pub axis_distance_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub n_views: usize,
    /// Calibrated views in ascending view order.
    pub entries: Vec<TrajectoryEntry>,
    pub failed: Vec<FailedView>,
    /// Center of the fitted circle.
    pub axis_point: Vector3<f64>,
    /// Unit rotation axis, oriented so the angles mostly increase.
    pub axis_direction: Vector3<f64>,
    pub radius_mm: f64,
}

fn wrap(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Algebraic circle fit in 2D; center and radius.
fn fit_circle(points: &[(f64, f64)]) -> Option<((f64, f64), f64)> {
    // x² + y² + D x + E y + F = 0 in the least-squares sense
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for &(x, y) in points {
        let row = Vector3::new(x, y, 1.0);
        ata += row * row.transpose();
        atb += row * -(x * x + y * y);
    }
    let sol = ata.lu().solve(&atb)?;
    let (cx, cy) = (-sol.x / 2.0, -sol.y / 2.0);
    let r2 = cx * cx + cy * cy - sol.z;
    (r2 > 0.0).then(|| ((cx, cy), r2.sqrt()))
}

impl TrajectoryReport {
    /// Builds the report from source positions of calibrated views.
    ///
    /// The axis is the normal of the best-fit plane through the sources and
    /// passes through the center of the circle fitted within that plane.
    /// With fewer than three sources the z axis through the origin is used.
    pub fn from_sources(n_views: usize, sources: &[(usize, Vector3<f64>)], failed: Vec<FailedView>) -> Self {
        let mut sources = sources.to_vec();
        sources.sort_by_key(|s| s.0);
        let mut failed = failed;
        failed.sort_by_key(|f| f.view_index);

        let (mut center, mut normal) = (Vector3::zeros(), Vector3::z());
        if sources.len() >= 3 {
            let mean = sources.iter().fold(Vector3::zeros(), |a, s| a + s.1) / sources.len() as f64;
            let mut scatter = Matrix3::zeros();
            for (_, s) in &sources {
                let d = s - mean;
                scatter += d * d.transpose();
            }
            let eig = scatter.symmetric_eigen();
            let imin = eig.eigenvalues.imin();
            normal = eig.eigenvectors.column(imin).into_owned();
            center = mean;
        }
        let basis = |n: &Vector3<f64>| {
            let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let e1 = (seed - n * n.dot(&seed)).normalize();
            (e1, n.cross(&e1))
        };
        let (e1, e2) = basis(&normal);
        let planar: Vec<(f64, f64)> = sources
            .iter()
            .map(|(_, s)| ((s - center).dot(&e1), (s - center).dot(&e2)))
            .collect();
        let mut radius = 0.0;
        if let Some(((cx, cy), r)) = (sources.len() >= 3).then(|| fit_circle(&planar)).flatten() {
            center += e1 * cx + e2 * cy;
            radius = r;
        } else if !sources.is_empty() {
            radius = sources.iter().map(|(_, s)| (s - center).norm()).sum::<f64>() / sources.len() as f64;
        }

        let raw_angles = |n: &Vector3<f64>| -> Vec<f64> {
            let (e1, e2) = basis(n);
            sources
                .iter()
                .map(|(_, s)| {
                    let d = s - center;
                    d.dot(&e2).atan2(d.dot(&e1))
                })
                .collect()
        };
        let mut angles = raw_angles(&normal);
        let forward: f64 = angles.windows(2).map(|w| wrap(w[1] - w[0])).sum();
        if forward < 0.0 {
            normal = -normal;
            angles = raw_angles(&normal);
        }

        let first = angles.first().copied().unwrap_or(0.0);
        let n = sources.len();
        let entries = (0..n)
            .map(|i| {
                let (view_index, s) = sources[i];
                let d = s - center;
                let h = d.dot(&normal);
                let rho = (d - normal * h).norm();
                let prev = if i == 0 { n - 1 } else { i - 1 };
                TrajectoryEntry {
                    view_index,
                    source_mm: s,
                    angle_rad: (angles[i] - first).rem_euclid(2.0 * PI),
                    d_angle_rad: if n > 1 { wrap(angles[i] - angles[prev]) } else { 0.0 },
                    circle_residual_mm: ((rho - radius).powi(2) + h * h).sqrt(),
                    axis_distance_mm: rho,
                }
            })
            .collect();
        Self {
            n_views,
            entries,
            failed,
            axis_point: center,
            axis_direction: normal,
            radius_mm: radius,
        }
    }

    pub fn from_calibrations(n_views: usize, cals: &[ViewCalibration], failed: Vec<FailedView>) -> Result<Self> {
        let sources = cals
            .iter()
            .map(|c| Ok((c.view_index, c.matrix.source_position()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_sources(n_views, &sources, failed))
    }

    /// FDK weights per calibrated view, in the order of `entries`: each view
    /// stands for half the angular gap to each neighbor.
    pub fn view_geometries(&self, matrices: &[(usize, crate::geometry::ProjectionMatrix)]) -> Vec<ViewGeometry> {
        let n = self.entries.len();
        (0..n)
            .filter_map(|i| {
                let e = &self.entries[i];
                let next = &self.entries[(i + 1) % n];
                let matrix = matrices.iter().find(|m| m.0 == e.view_index)?.1;
                let d_angle = if n > 1 {
                    0.5 * (e.d_angle_rad + next.d_angle_rad)
                } else {
                    2.0 * PI
                };
                Some(ViewGeometry {
                    matrix,
                    d_angle_rad: d_angle,
                    source_axis_distance_mm: e.axis_distance_mm,
                })
            })
            .collect()
    }

    /// `view_index,source_x_mm,source_y_mm,source_z_mm,angle_rad,d_angle_rad,circle_residual_mm`
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("view_index,source_x_mm,source_y_mm,source_z_mm,angle_rad,d_angle_rad,circle_residual_mm\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{:.9},{:.9},{:.9},{:.12},{:.12},{:.9}",
                e.view_index, e.source_mm.x, e.source_mm.y, e.source_mm.z, e.angle_rad, e.d_angle_rad, e.circle_residual_mm
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}
