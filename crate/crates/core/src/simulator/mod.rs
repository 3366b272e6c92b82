//! Analytic cone-beam forward model used as ground truth.

mod scan;
mod scenario;
mod synthetic;
mod trajectory;

pub use scan::{random_stuck_pixels, render_raw_scan, NoiseConfig, RawScan, StuckPixel};
pub use scenario::{default_specimen, Scenario, SCENARIO_BAND_FRACTION};
pub use synthetic::{synthetic_detections, SyntheticView};
pub use trajectory::{DETECTOR_SIDE_MM, ideal_view_geometries, make_trajectory, true_views, TrajectoryConfig, TrueView};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::ProjectionMatrix;
use crate::phantom::PhantomModel;
use crate::reconstruction::VolumeGrid;
use crate::{par, Error, Image, Result};

/// Homogeneous ellipsoid. Columns of `orientation` are the directions of
/// the semi-axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    #[serde(default = "identity_rows")]
    pub orientation: [[f64; 3]; 3],
    /// Linear attenuation, 1/mm.
    pub density: f64,
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl Ellipsoid {
    pub fn sphere(center: Vector3<f64>, radius: f64, density: f64) -> Self {
        Self {
            center_mm: center.into(),
            semi_axes_mm: [radius; 3],
            orientation: identity_rows(),
            density,
        }
    }

    fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.orientation.concat())
    }

    /// Maps world points into the frame where the ellipsoid is the unit ball.
    fn to_unit(&self) -> Matrix3<f64> {
        let a = self.semi_axes_mm;
        Matrix3::from_diagonal(&Vector3::new(1.0 / a[0], 1.0 / a[1], 1.0 / a[2])) * self.rotation().transpose()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.semi_axes_mm.iter().all(|&a| a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidInput("ellipsoid semi-axes must be positive".into()));
        }
        if !self.density.is_finite() || !self.center_mm.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("ellipsoid center and density must be finite".into()));
        }
        let r = self.rotation();
        if ((r.transpose() * r) - Matrix3::identity()).abs().max() > 1e-9 {
            return Err(Error::InvalidInput("ellipsoid orientation is not orthonormal".into()));
        }
        Ok(())
    }

    /// Length of the segment of the ray `origin + t·dir` (unit `dir`) inside
    /// the ellipsoid.
    pub fn chord_length(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
        let m = self.to_unit();
        let p = m * (origin - Vector3::from(self.center_mm));
        let q = m * dir;
        let qq = q.norm_squared();
        let pq = p.dot(&q);
        let disc = pq * pq - qq * (p.norm_squared() - 1.0);
        if disc <= 0.0 {
            0.0
        } else {
            2.0 * disc.sqrt() / qq
        }
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (self.to_unit() * (x - Vector3::from(self.center_mm))).norm_squared() <= 1.0
    }

    fn box_corners(&self) -> [Vector3<f64>; 8] {
        let r = self.rotation();
        let c = Vector3::from(self.center_mm);
        let a = self.semi_axes_mm;
        std::array::from_fn(|n| {
            let s = |b: usize| if n >> b & 1 == 1 { 1.0 } else { -1.0 };
            c + r.column(0) * (s(0) * a[0]) + r.column(1) * (s(1) * a[1]) + r.column(2) * (s(2) * a[2])
        })
    }
}

/// Specimen ellipsoids plus the calibration beads as dense spheres.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticPhantom {
    pub ellipsoids: Vec<Ellipsoid>,
    pub beads: Vec<Ellipsoid>,
}

impl AnalyticPhantom {
    pub fn new(specimen: Vec<Ellipsoid>, markers: Option<&PhantomModel>, bead_density: f64) -> Result<Self> {
        let beads = markers
            .map(|m| {
                m.elements()
                    .iter()
                    .flat_map(|e| {
                        e.bead_centers
                            .iter()
                            .zip(&e.bead_radii)
                            .map(|(c, r)| Ellipsoid::sphere(*c, *r, bead_density))
                    })
                    .collect()
            })
            .unwrap_or_default();
        let ph = Self {
            ellipsoids: specimen,
            beads,
        };
        for e in ph.all() {
            e.validate()?;
        }
        Ok(ph)
    }

    pub fn all(&self) -> impl Iterator<Item = &Ellipsoid> {
        self.ellipsoids.iter().chain(&self.beads)
    }

    /// Sum of densities of the ellipsoids containing `x`.
    pub fn density_at(&self, x: &Vector3<f64>) -> f64 {
        self.all().filter(|e| e.contains(x)).map(|e| e.density).sum()
    }

    /// Ground-truth volume averaging `n³` sub-voxel samples per voxel.
    pub fn voxelize(&self, grid: &VolumeGrid, n: usize) -> Vec<f32> {
        let n = n.max(1);
        let [nx, ny, _] = grid.dims;
        let offs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect();
        par::map_range(grid.voxel_count(), |idx| {
            let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
            let c = grid.voxel_center(i, j, k);
            let mut acc = 0.0;
            for a in &offs {
                for b in &offs {
                    for d in &offs {
                        let x = c + Vector3::new(a * grid.spacing_mm[0], b * grid.spacing_mm[1], d * grid.spacing_mm[2]);
                        acc += self.density_at(&x);
                    }
                }
            }
            (acc / (n * n * n) as f64) as f32
        })
    }
}

/// Exact line integrals: for every pixel center, the sum over ellipsoids of
/// density times the chord of the source-to-pixel ray.
pub fn forward_project(ph: &AnalyticPhantom, p: &ProjectionMatrix, width: usize, height: usize) -> Result<Image> {
    let source = p.source_position()?;
    let m_inv = p
        .left_block()
        .try_inverse()
        .ok_or(Error::SingularCamera { condition: f64::INFINITY })?;
    let mut acc = vec![0f64; width * height];
    for e in ph.all() {
        let Some((x0, x1, y0, y1)) = footprint(e, p, width, height) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (m_inv * Vector3::new(x as f64, y as f64, 1.0)).normalize();
                let dir = if p.homogeneous(&(source + d)).z > 0.0 { d } else { -d };
                acc[y * width + x] += e.density * e.chord_length(&source, &dir);
            }
        }
    }
    Ok(Image::from_vec(width, height, acc.into_iter().map(|v| v as f32).collect()))
}

/// Pixel bounding box of an ellipsoid's projection, from its oriented
/// bounding box; the whole detector if any corner is not in front.
fn footprint(e: &Ellipsoid, p: &ProjectionMatrix, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in e.box_corners() {
        let q = p.homogeneous(&c);
        if q.z <= 0.0 {
            return Some((0, w - 1, 0, h - 1));
        }
        let (u, v) = (q.x / q.z, q.y / q.z);
        lo = (lo.0.min(u), lo.1.min(v));
        hi = (hi.0.max(u), hi.1.max(v));
    }
    if hi.0 < 0.0 || hi.1 < 0.0 || lo.0 > (w - 1) as f64 || lo.1 > (h - 1) as f64 {
        return None;
    }
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64) as usize;
    Some((
        clamp(lo.0.floor(), w),
        clamp(hi.0.ceil(), w),
        clamp(lo.1.floor(), h),
        clamp(hi.1.ceil(), h),
    ))
}
