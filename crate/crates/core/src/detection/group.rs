//! Grouping of bead detections into collinear element candidates.

use nalgebra::{Matrix2, Vector2};

use super::{BeadDetection, ElementCandidate, LARGE_BEAD_RATIO};

/// Total-least-squares line: centroid, unit direction, RMS perpendicular
/// distance.
fn fit_line_2d(points: &[Vector2<f64>]) -> (Vector2<f64>, Vector2<f64>, f64) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let dir = eig.eigenvectors.column(major).into_owned();
    let rms = (eig.eigenvalues[minor].max(0.0) / n).sqrt();
    (mean, dir, rms)
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Candidate from detections ordered large bead first, or `None` if the
/// quadruple breaks a candidate invariant.
fn build(dets: [BeadDetection; 4], tol: f64) -> Option<ElementCandidate> {
    let centers = dets.map(|d| d.center);
    let (_, mut dir, residual) = fit_line_2d(&centers);
    if residual > tol {
        return None;
    }
    if dir.dot(&(centers[3] - centers[0])) < 0.0 {
        dir = -dir;
    }
    let axial = centers.map(|c| (c - centers[0]).dot(&dir));
    if !axial.windows(2).all(|w| w[1] > w[0]) {
        return None;
    }
    if dets[0].radius <= LARGE_BEAD_RATIO * median3(dets[1].radius, dets[2].radius, dets[3].radius) {
        return None;
    }
    // exactly one large bead
    if dets[1..].iter().any(|d| d.radius * LARGE_BEAD_RATIO >= dets[0].radius) {
        return None;
    }
    Some(ElementCandidate {
        detections: dets,
        line_residual: residual,
        axial_positions: axial,
    })
}

/// Enumerates collinear quadruples with a single large bead at one end.
///
/// Every ordered pair (large end, far end) is tried with all pairs of
/// detections lying between them near the chord. Candidates are then
/// accepted by increasing residual, dropping any that shares two or more
/// detections with an accepted one.
pub fn group_candidates(dets: &[BeadDetection], collinearity_tol: f64) -> Vec<ElementCandidate> {
    let mut found: Vec<(f64, [usize; 4], ElementCandidate)> = Vec::new();
    let mut between: Vec<(f64, usize)> = Vec::new();
    for (l, large) in dets.iter().enumerate() {
        for (f, far) in dets.iter().enumerate() {
            if f == l || large.radius <= LARGE_BEAD_RATIO * far.radius {
                continue;
            }
            let chord = far.center - large.center;
            let len = chord.norm();
            if len == 0.0 {
                continue;
            }
            let dir = chord / len;
            between.clear();
            for (m, d) in dets.iter().enumerate() {
                if m == l || m == f {
                    continue;
                }
                let rel = d.center - large.center;
                let t = rel.dot(&dir);
                let off = (rel.x * dir.y - rel.y * dir.x).abs();
                // a quadruple with rms residual r has no point farther than 2r
                // from its fitted line, hence none farther than 4r from the chord
                if t > 0.0 && t < len && off <= 4.0 * collinearity_tol {
                    between.push((t, m));
                }
            }
            between.sort_by(|a, b| a.0.total_cmp(&b.0));
            for i in 0..between.len() {
                for j in i + 1..between.len() {
                    let idx = [l, between[i].1, between[j].1, f];
                    if let Some(c) = build(idx.map(|k| dets[k]), collinearity_tol) {
                        found.push((c.line_residual, idx, c));
                    }
                }
            }
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut accepted: Vec<([usize; 4], ElementCandidate)> = Vec::new();
    for (_, idx, c) in found {
        let clash = accepted
            .iter()
            .any(|(other, _)| idx.iter().filter(|k| other.contains(k)).count() >= 2);
        if !clash {
            accepted.push((idx, c));
        }
    }
    accepted.into_iter().map(|(_, c)| c).collect()
}

/// Groups the top and bottom search bands separately when they are disjoint,
/// so no candidate straddles the two marker rings; otherwise the same as
/// [`group_candidates`].
pub fn group_candidates_in_bands(
    dets: &[BeadDetection],
    height: usize,
    band_fraction: Option<f64>,
    collinearity_tol: f64,
) -> Vec<ElementCandidate> {
    match band_fraction {
        Some(f) if f < 0.5 => {
            let mid = height as f64 / 2.0;
            let (top, bottom): (Vec<BeadDetection>, Vec<BeadDetection>) =
                dets.iter().partition(|d| d.center.y < mid);
            let mut out = group_candidates(&top, collinearity_tol);
            out.extend(group_candidates(&bottom, collinearity_tol));
            out
        }
        _ => group_candidates(dets, collinearity_tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn det(x: f64, y: f64, r: f64) -> BeadDetection {
        BeadDetection::new(Vector2::new(x, y), r, 1.0)
    }

    fn element(origin: Vector2<f64>, dir: Vector2<f64>, axial: [f64; 4]) -> Vec<BeadDetection> {
        axial
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let p = origin + dir.normalize() * a;
                det(p.x, p.y, if i == 0 { 6.0 } else { 3.0 })
            })
            .collect()
    }

    #[test]
    fn finds_element_among_distractors() {
        let mut dets = element(Vector2::new(40.0, 30.0), Vector2::new(1.0, 0.3), [0.0, 30.0, 70.0, 120.0]);
        let truth = dets.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..6 {
            let r = if rng.random_bool(0.3) { 6.0 } else { 3.0 };
            dets.push(det(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0), r));
        }
        let cands = group_candidates(&dets, 1.0);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].detections.to_vec(), truth);
        assert_eq!(cands[0].axial_positions[0], 0.0);
        assert!((cands[0].axial_positions[3] - 120.0).abs() < 1e-9);
    }

    #[test]
    fn bands_keep_candidates_within_one_ring() {
        let mut dets = element(Vector2::new(40.0, 20.0), Vector2::new(1.0, 0.2), [0.0, 10.0, 25.0, 45.0]);
        // a quadruple that is only collinear across the image middle
        dets.extend(element(Vector2::new(150.0, 30.0), Vector2::new(0.0, 1.0), [0.0, 30.0, 100.0, 150.0]));
        assert_eq!(group_candidates(&dets, 1.0).len(), 2);
        let banded = group_candidates_in_bands(&dets, 200, Some(0.4), 1.0);
        assert_eq!(banded.len(), 1);
        assert_eq!(banded[0].detections[0].center, Vector2::new(40.0, 20.0));
        assert_eq!(group_candidates_in_bands(&dets, 200, None, 1.0).len(), 2);
    }

    #[test]
    fn three_beads_are_not_an_element() {
        let mut dets = element(Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0), [0.0, 30.0, 70.0, 120.0]);
        dets.pop();
        assert!(group_candidates(&dets, 1.0).is_empty());
    }

    #[test]
    fn two_disjoint_elements() {
        let mut dets = element(Vector2::new(10.0, 10.0), Vector2::new(1.0, 0.0), [0.0, 20.0, 45.0, 80.0]);
        dets.extend(element(Vector2::new(200.0, 150.0), Vector2::new(-1.0, 0.2), [0.0, 35.0, 50.0, 90.0]));
        dets.reverse();
        assert_eq!(group_candidates(&dets, 1.0).len(), 2);
    }

    #[test]
    fn large_bead_must_be_at_an_end() {
        let mut dets = element(Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0), [0.0, 30.0, 70.0, 120.0]);
        dets[0].radius = 3.0;
        dets[1].radius = 6.0;
        assert!(group_candidates(&dets, 1.0).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn candidates_satisfy_invariants(
            raw in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0, 1.0f64..8.0), 0..14),
            collinear in prop::collection::vec(0.0f64..100.0, 0..6),
        ) {
            let mut dets: Vec<_> = raw.iter().map(|&(x, y, r)| det(x, y, r)).collect();
            // a near-line cluster so that candidates actually occur
            for (i, &t) in collinear.iter().enumerate() {
                dets.push(det(t, 0.5 * t + 0.3 * (i % 2) as f64, if i == 0 { 7.0 } else { 2.5 }));
            }
            let tol = 1.0;
            let cands = group_candidates(&dets, tol);
            for c in &cands {
                prop_assert!(c.line_residual <= tol);
                let r = c.detections.map(|d| d.radius);
                prop_assert!(r[0] > LARGE_BEAD_RATIO * median3(r[1], r[2], r[3]));
                prop_assert_eq!(c.axial_positions[0], 0.0);
                prop_assert!(c.axial_positions.windows(2).all(|w| w[1] > w[0]));
            }
            for (i, a) in cands.iter().enumerate() {
                for b in &cands[i + 1..] {
                    let shared = a.detections.iter().filter(|d| b.detections.contains(d)).count();
                    prop_assert!(shared < 2);
                }
            }
        }
    }
}
