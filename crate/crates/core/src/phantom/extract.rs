//! Reference bead positions from a CT volume of the phantom.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{fit_line, line_distance, CalibrationElement, PhantomModel};
use crate::rawio::{read_f32_le, sidecar_path, write_f32_le, Header, VolumeHeader};
use crate::{Error, Result};

/// Scalar attenuation volume; voxel `(i, j, k)` is centered at
/// `origin + spacing ∘ (i, j, k)`, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceVolume {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub voxels: Vec<f32>,
}

impl ReferenceVolume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3], voxels: Vec<f32>) -> Result<Self> {
        if voxels.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidInput("voxel buffer does not match dims".into()));
        }
        if !spacing_mm.iter().all(|&s| s > 0.0) {
            return Err(Error::InvalidInput("voxel spacing must be positive".into()));
        }
        if !voxels.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite voxel value".into()));
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
            voxels,
        })
    }

    /// Reads `raw` and its `.hdr` sidecar.
    pub fn read(raw: &Path) -> Result<Self> {
        let hdr_path = sidecar_path(raw);
        let h = VolumeHeader::from_header(&Header::read(&hdr_path)?, &hdr_path)?;
        let voxels = read_f32_le(raw, h.voxel_count())?;
        Self::new(h.dims, h.spacing_mm, h.origin_mm, voxels)
    }

    pub fn write(&self, raw: &Path) -> Result<()> {
        write_f32_le(raw, &self.voxels)?;
        self.header().to_header().write(&sidecar_path(raw))
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
        }
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin_mm[0] + self.spacing_mm[0] * i as f64,
            self.origin_mm[1] + self.spacing_mm[1] * j as f64,
            self.origin_mm[2] + self.spacing_mm[2] * k as f64,
        )
    }
}

/// One connected bright component.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBead {
    /// Intensity-weighted center of mass, mm.
    pub center_mm: Vector3<f64>,
    pub volume_mm3: f64,
    pub voxel_count: usize,
    /// Principal spreads differ by more than 2×: likely two touching beads.
    pub non_spherical: bool,
}

impl ReferenceBead {
    /// Radius of the sphere with this component's volume.
    pub fn equivalent_radius_mm(&self) -> f64 {
        (3.0 * self.volume_mm3 / (4.0 * PI)).cbrt()
    }
}

const MIN_COMPONENT_VOXELS: usize = 3;

/// Labels 6-connected components of voxels above `threshold` and returns the
/// intensity-weighted center of mass and volume of each, in scan order of
/// their first voxel. Components smaller than three voxels are dropped.
pub fn extract_reference_beads(v: &ReferenceVolume, threshold: f32) -> Result<Vec<ReferenceBead>> {
    let [nx, ny, nz] = v.dims;
    let voxel_volume: f64 = v.spacing_mm.iter().product();
    let mut visited = vec![false; v.voxels.len()];
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    let mut beads = Vec::new();

    for start in 0..v.voxels.len() {
        if visited[start] || v.voxels[start] <= threshold {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        members.clear();
        while let Some(idx) = queue.pop_front() {
            members.push(idx);
            let i = idx % nx;
            let j = (idx / nx) % ny;
            let k = idx / (nx * ny);
            let mut visit = |n: usize| {
                if !visited[n] && v.voxels[n] > threshold {
                    visited[n] = true;
                    queue.push_back(n);
                }
            };
            if i > 0 {
                visit(idx - 1);
            }
            if i + 1 < nx {
                visit(idx + 1);
            }
            if j > 0 {
                visit(idx - nx);
            }
            if j + 1 < ny {
                visit(idx + nx);
            }
            if k > 0 {
                visit(idx - nx * ny);
            }
            if k + 1 < nz {
                visit(idx + nx * ny);
            }
        }
        if members.len() < MIN_COMPONENT_VOXELS {
            continue;
        }

        let mut weight = 0.0;
        let mut weighted = Vector3::zeros();
        let mut mean = Vector3::zeros();
        let positions: Vec<Vector3<f64>> = members
            .iter()
            .map(|&idx| v.voxel_center(idx % nx, (idx / nx) % ny, idx / (nx * ny)))
            .collect();
        for (&idx, p) in members.iter().zip(&positions) {
            let w = v.voxels[idx] as f64;
            weight += w;
            weighted += p * w;
            mean += p;
        }
        mean /= positions.len() as f64;
        let mut cov = Matrix3::zeros();
        for p in &positions {
            let d = p - mean;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigenvalues();
        let non_spherical = eig.min() <= 0.0 || eig.max() > 2.0 * eig.min();
        beads.push(ReferenceBead {
            center_mm: weighted / weight,
            volume_mm3: members.len() as f64 * voxel_volume,
            voxel_count: members.len(),
            non_spherical,
        });
    }
    if beads.is_empty() {
        return Err(Error::NoBeadsFound);
    }
    Ok(beads)
}

/// Expected phantom structure for [`fit_elements_to_beads`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConstraints {
    pub n_elements: usize,
    /// Maximum distance (mm) of a bead from a candidate element line.
    pub inlier_tol_mm: f64,
    pub frame_note: String,
}

impl FitConstraints {
    pub fn new(n_elements: usize) -> Self {
        Self {
            n_elements,
            inlier_tol_mm: 0.5,
            frame_note: "measured bead centers from reference CT".into(),
        }
    }
}

/// Groups extracted beads into collinear quadruples and assembles a phantom.
///
/// Lines through every pair of remaining beads are scored exhaustively; a
/// line with exactly four inliers within `inlier_tol_mm` is an element
/// candidate, and the one with the smallest fit residual is taken first. The
/// largest component marks the directional end. Stored bead centers are the
/// measured centroids projected onto the element's best-fit line.
///
/// Element ids are assigned top ring first (by height relative to the phantom
/// mean), then by increasing azimuth about the z axis, both taken at the point
/// of each element line closest to the axis.
pub fn fit_elements_to_beads(beads: &[ReferenceBead], constraints: &FitConstraints) -> Result<PhantomModel> {
    let expected = 4 * constraints.n_elements;
    if beads.len() != expected {
        return Err(Error::GroupingFailed(format!(
            "expected {expected} beads for {} elements, found {}",
            constraints.n_elements,
            beads.len()
        )));
    }
    let mut remaining: Vec<usize> = (0..beads.len()).collect();
    let mut groups: Vec<[usize; 4]> = Vec::new();
    while !remaining.is_empty() {
        let mut best: Option<(f64, [usize; 4])> = None;
        for (a, &i) in remaining.iter().enumerate() {
            for &j in &remaining[a + 1..] {
                let o = beads[i].center_mm;
                let d = beads[j].center_mm - o;
                let len = d.norm();
                if len == 0.0 {
                    continue;
                }
                let dir = d / len;
                let inliers: Vec<usize> = remaining
                    .iter()
                    .copied()
                    .filter(|&m| line_distance(&beads[m].center_mm, &o, &dir) <= constraints.inlier_tol_mm)
                    .collect();
                if inliers.len() != 4 {
                    continue;
                }
                let pts: Vec<_> = inliers.iter().map(|&m| beads[m].center_mm).collect();
                let (fo, fd) = fit_line(&pts);
                let residual = pts.iter().map(|p| line_distance(p, &fo, &fd)).fold(0.0, f64::max);
                let quad = [inliers[0], inliers[1], inliers[2], inliers[3]];
                if best.as_ref().is_none_or(|(r, _)| residual < *r) {
                    best = Some((residual, quad));
                }
            }
        }
        let (_, quad) = best.ok_or_else(|| {
            Error::GroupingFailed(format!(
                "no collinear quadruple among the {} unassigned beads",
                remaining.len()
            ))
        })?;
        remaining.retain(|m| !quad.contains(m));
        groups.push(quad);
    }

    let mut elements: Vec<CalibrationElement> = groups
        .iter()
        .map(|quad| orient(beads, quad))
        .collect::<Result<_>>()?;

    let mean_z = elements.iter().map(|e| anchor(e).z).sum::<f64>() / elements.len() as f64;
    let key = |e: &CalibrationElement| {
        let m = anchor(e);
        let mut phi = m.y.atan2(m.x).rem_euclid(2.0 * PI);
        if phi > 2.0 * PI - AZIMUTH_WRAP {
            phi -= 2.0 * PI;
        }
        (m.z <= mean_z, phi)
    };
    elements.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    for (id, e) in elements.iter_mut().enumerate() {
        e.id = id as u32;
    }
    PhantomModel::new(elements, constraints.frame_note.clone())
        .map_err(|e| Error::GroupingFailed(format!("fitted elements invalid: {e}")))
}

/// Azimuths this close below 2π sort as slightly negative, so an element
/// placed at azimuth 0 keeps its place under measurement noise.
const AZIMUTH_WRAP: f64 = 0.05;

/// Point of the element line closest to the z axis; the midpoint for lines
/// parallel to it.
fn anchor(e: &CalibrationElement) -> Vector3<f64> {
    let mid = e.bead_centers.iter().fold(Vector3::zeros(), |a, c| a + c) / 4.0;
    let d = e.axis();
    let dxy = d.x * d.x + d.y * d.y;
    if dxy < 1e-6 {
        return mid;
    }
    mid - d * ((mid.x * d.x + mid.y * d.y) / dxy)
}

fn orient(beads: &[ReferenceBead], quad: &[usize; 4]) -> Result<CalibrationElement> {
    let pts: Vec<_> = quad.iter().map(|&m| beads[m].center_mm).collect();
    let (o, dir) = fit_line(&pts);
    let large = (0..4)
        .max_by(|&a, &b| beads[quad[a]].volume_mm3.total_cmp(&beads[quad[b]].volume_mm3))
        .unwrap();
    let t_large = (pts[large] - o).dot(&dir);
    let ts: Vec<f64> = pts.iter().map(|p| (p - o).dot(&dir)).collect();
    let ahead = ts.iter().filter(|&&t| t > t_large).count();
    let sign = match ahead {
        3 => 1.0,
        0 => -1.0,
        _ => {
            return Err(Error::GroupingFailed(
                "largest bead is not at an end of its element".into(),
            ))
        }
    };
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| (sign * (ts[a] - t_large)).total_cmp(&(sign * (ts[b] - t_large))));
    let centers = order.iter().map(|&m| o + dir * ts[m]).collect::<Vec<_>>();
    let radii = order
        .iter()
        .map(|&m| beads[quad[m]].equivalent_radius_mm())
        .collect::<Vec<_>>();
    let element = CalibrationElement {
        id: 0,
        bead_centers: [centers[0], centers[1], centers[2], centers[3]],
        bead_radii: [radii[0], radii[1], radii[2], radii[3]],
    };
    element
        .validate()
        .map_err(|e| Error::GroupingFailed(format!("quadruple violates element invariants: {e}")))?;
    Ok(element)
}
