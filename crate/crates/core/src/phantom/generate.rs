use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CalibrationElement, PhantomModel};
use crate::geometry::cross_ratio;
use crate::{Error, Result};

const MAX_SAMPLES: usize = 1_000_000;

/// Parameters of a generated bead phantom.
///
/// Elements are split across two rings around a cylindrical container, the
/// first `ceil(n/2)` on the top ring and the rest on the bottom ring, with the
/// bottom ring rotated by half an azimuthal step. Each stick lies tangent to
/// its ring, tilted upward by `tilt_deg`, with the large bead at its lower end.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PhantomDesign {
    pub n_elements: usize,
    pub element_length_mm: f64,
    pub min_gap_mm: f64,
    pub cr_margin: f64,
    pub seed: u64,
    pub ring_radius_mm: f64,
    pub top_ring_z_mm: f64,
    pub bottom_ring_z_mm: f64,
    pub tilt_deg: f64,
    pub large_bead_radius_mm: f64,
    pub small_bead_radius_mm: f64,
}

impl Default for PhantomDesign {
    fn default() -> Self {
        Self {
            n_elements: 10,
            element_length_mm: 60.0,
            min_gap_mm: 5.0,
            cr_margin: super::DEFAULT_CR_MARGIN,
            seed: 7,
            ring_radius_mm: 35.0,
            top_ring_z_mm: 42.0,
            bottom_ring_z_mm: -42.0,
            tilt_deg: 55.0,
            large_bead_radius_mm: 1.6,
            small_bead_radius_mm: 0.8,
        }
    }
}

/// Attainable cross-ratio interval for layouts `0 < x < y < L` with every
/// consecutive gap at least `g`: `cr = y (L − x) / (L (y − x))`.
pub fn cross_ratio_range(length: f64, gap: f64) -> Option<(f64, f64)> {
    if !(gap > 0.0 && length >= 3.0 * gap) {
        return None;
    }
    let lo = (length - gap).powi(2) / (length * (length - 2.0 * gap));
    let hi = ((length + gap) / 2.0).powi(2) / (length * gap);
    Some((lo, hi))
}

/// Seeded rejection sampling of bead layouts with pairwise-separated
/// cross-ratios, placed on the two container rings.
pub fn generate_phantom(design: &PhantomDesign) -> Result<PhantomModel> {
    let n = design.n_elements;
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "a phantom needs at least 2 elements, got {n}"
        )));
    }
    let length = design.element_length_mm;
    let gap = design
        .min_gap_mm
        .max(2.0 * design.large_bead_radius_mm.max(design.small_bead_radius_mm));
    let margin = design.cr_margin;
    let (lo, hi) = cross_ratio_range(length, gap).ok_or_else(|| {
        Error::InfeasibleDesign(format!(
            "element length {length} mm cannot hold three gaps of {gap} mm"
        ))
    })?;
    if (n - 1) as f64 * margin > hi - lo {
        return Err(Error::InfeasibleDesign(format!(
            "{n} cross-ratios separated by {margin} need a span of {:.3}, attainable range is [{lo:.3}, {hi:.3}]",
            (n - 1) as f64 * margin
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let mut layouts: Vec<([f64; 4], f64)> = Vec::with_capacity(n);
    let mut samples = 0;
    while layouts.len() < n {
        if samples == MAX_SAMPLES {
            return Err(Error::InfeasibleDesign(format!(
                "{MAX_SAMPLES} samples produced only {} of {n} separable layouts",
                layouts.len()
            )));
        }
        samples += 1;
        let x = rng.random_range(gap..=length - 2.0 * gap);
        let y = rng.random_range(x + gap..=length - gap);
        let axial = [0.0, x, y, length];
        let cr = cross_ratio(axial[0], axial[1], axial[2], axial[3])?;
        if layouts.iter().all(|(_, c)| (c - cr).abs() >= margin) {
            layouts.push((axial, cr));
        }
    }

    let n_top = n.div_ceil(2);
    let n_bottom = n - n_top;
    let tilt = design.tilt_deg.to_radians();
    let radii = [
        design.large_bead_radius_mm,
        design.small_bead_radius_mm,
        design.small_bead_radius_mm,
        design.small_bead_radius_mm,
    ];
    let elements = layouts
        .into_iter()
        .enumerate()
        .map(|(i, (axial, _))| {
            let (phi, z, sense) = if i < n_top {
                (2.0 * PI * i as f64 / n_top as f64, design.top_ring_z_mm, 1.0)
            } else {
                let j = i - n_top;
                (
                    2.0 * PI * (j as f64 + 0.5) / n_bottom as f64,
                    design.bottom_ring_z_mm,
                    -1.0,
                )
            };
            let tangent = Vector3::new(-phi.sin(), phi.cos(), 0.0);
            let dir = tangent * (sense * tilt.cos()) + Vector3::z() * tilt.sin();
            let center = Vector3::new(
                design.ring_radius_mm * phi.cos(),
                design.ring_radius_mm * phi.sin(),
                z,
            );
            CalibrationElement {
                id: i as u32,
                bead_centers: axial.map(|a| center + dir * (a - 0.5 * length)),
                bead_radii: radii,
            }
        })
        .collect();
    PhantomModel::new(
        elements,
        "phantom frame: z is the container axis (mm), rings centered on z = 0",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_elements_are_pairwise_separated() {
        let design = PhantomDesign {
            n_elements: 10,
            element_length_mm: 60.0,
            min_gap_mm: 5.0,
            cr_margin: 0.05,
            seed: 7,
            ..PhantomDesign::default()
        };
        let ph = generate_phantom(&design).unwrap();
        assert_eq!(ph.elements().len(), 10);
        let crs: Vec<f64> = ph.descriptor_table().values().cloned().collect();
        for i in 0..crs.len() {
            for j in i + 1..crs.len() {
                assert!((crs[i] - crs[j]).abs() >= 0.05, "{} vs {}", crs[i], crs[j]);
            }
        }
        // every stick keeps its length and its large bead lowest
        for e in ph.elements() {
            let len = (e.bead_centers[3] - e.bead_centers[0]).norm();
            assert!((len - 60.0).abs() < 1e-9);
            assert!(e.bead_centers[0].z < e.bead_centers[3].z);
        }
    }

    #[test]
    fn single_element_rejected() {
        let design = PhantomDesign {
            n_elements: 1,
            ..PhantomDesign::default()
        };
        assert!(matches!(generate_phantom(&design), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn oversized_margin_is_infeasible() {
        let design = PhantomDesign {
            cr_margin: 10.0,
            ..PhantomDesign::default()
        };
        assert!(matches!(generate_phantom(&design), Err(Error::InfeasibleDesign(_))));
    }

    #[test]
    fn range_bound_matches_enumeration() {
        // brute-force the gap-constrained layout grid
        let (length, gap) = (60.0, 5.0);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        let steps = 2000;
        for i in 0..=steps {
            let x = gap + (length - 3.0 * gap) * i as f64 / steps as f64;
            for j in 0..=200 {
                let y = x + gap + (length - gap - x - gap) * j as f64 / 200.0;
                let cr = cross_ratio(0.0, x, y, length).unwrap();
                lo = lo.min(cr);
                hi = hi.max(cr);
            }
        }
        let (a, b) = cross_ratio_range(length, gap).unwrap();
        assert!((a - lo).abs() < 1e-9, "{a} vs {lo}");
        assert!((b - hi).abs() < 1e-5, "{b} vs {hi}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn generated_phantoms_satisfy_invariants(seed in 0u64..10_000) {
            let design = PhantomDesign { seed, ..PhantomDesign::default() };
            let ph = generate_phantom(&design).unwrap();
            prop_assert_eq!(ph.elements().len(), design.n_elements);
            prop_assert!(ph.min_descriptor_separation() >= design.cr_margin);
            for e in ph.elements() {
                prop_assert!(e.validate().is_ok());
            }
        }
    }
}
