//! Source pose with known intrinsics.
//!
//! With the intrinsics fixed only six extrinsic parameters remain, which two
//! non-coplanar bead sticks already determine (a full DLT needs three: the
//! four beads of a stick add just five independent constraints, because the
//! fourth bead's image is fixed by the cross-ratio).

use nalgebra::{Matrix3, Matrix3x4, Matrix6, Rotation3, Vector2, Vector3, Vector6};

use super::dlt::{denormalize, design_matrix, smallest_right_singular_vectors};
use super::{PointCorrespondence, ProjectionMatrix};
use crate::{Error, Result};

/// Extrinsics `[R | t]` fitted under fixed intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFit {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Root-mean-square reprojection error, pixels.
    pub rms: f64,
    pub iterations: usize,
}

impl PoseFit {
    pub fn matrix(&self, k: &Matrix3<f64>) -> ProjectionMatrix {
        ProjectionMatrix::compose(k, &self.rotation, &self.center())
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn residuals(
    k: &Matrix3<f64>,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    corrs: &[PointCorrespondence],
) -> Option<f64> {
    let mut cost = 0.0;
    for c in corrs {
        let xc = r * c.world + t;
        if xc.z <= 0.0 {
            return None;
        }
        let p = k * xc;
        let e = Vector2::new(p.x / p.z, p.y / p.z) - c.pixel;
        cost += e.norm_squared();
    }
    Some(cost)
}

/// Levenberg–Marquardt refinement of `[R | t]` minimizing squared pixel
/// reprojection error with `k` held fixed.
///
/// Stops after `max_iter` iterations or once the gradient's max-norm drops
/// below `grad_tol`.
pub fn refine_pose(
    k: &Matrix3<f64>,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    corrs: &[PointCorrespondence],
    max_iter: usize,
    grad_tol: f64,
) -> PoseFit {
    let mut r = *rotation;
    let mut t = *translation;
    let mut cost = residuals(k, &r, &t, corrs).unwrap_or(f64::INFINITY);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in corrs {
            let rx = r * c.world;
            let xc = rx + t;
            let p = k * xc;
            let (u, v) = (p.x / p.z, p.y / p.z);
            let e = Vector2::new(u - c.pixel.x, v - c.pixel.y);
            let z = xc.z;
            let du = (k.row(0) - Vector3::new(0.0, 0.0, u).transpose()) / z;
            let dv = (k.row(1) - Vector3::new(0.0, 0.0, v).transpose()) / z;
            let dxc_dw = -skew(&rx);
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<1, 3>(0, 0).copy_from(&(du * dxc_dw));
            j.fixed_view_mut::<1, 3>(0, 3).copy_from(&du);
            j.fixed_view_mut::<1, 3>(1, 0).copy_from(&(dv * dxc_dw));
            j.fixed_view_mut::<1, 3>(1, 3).copy_from(&dv);
            h += j.transpose() * j;
            g += j.transpose() * e;
        }
        if g.amax() < grad_tol {
            break;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let dw = Vector3::new(step[0], step[1], step[2]);
            let r_new = Rotation3::new(dw).into_inner() * r;
            let t_new = t + Vector3::new(step[3], step[4], step[5]);
            match residuals(k, &r_new, &t_new, corrs) {
                Some(c_new) if c_new <= cost => {
                    let converged = cost - c_new <= 1e-15 * cost.max(1e-300);
                    r = r_new;
                    t = t_new;
                    cost = c_new;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = !converged;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    // re-orthonormalize against drift from repeated small rotations
    let svd = r.svd(true, true);
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    PoseFit {
        rotation: r,
        translation: t,
        rms: (cost / corrs.len().max(1) as f64).sqrt(),
        iterations,
    }
}

/// Closest rotation to `m` in Frobenius norm, with its mean singular value.
fn nearest_rotation(m: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    (u * d * vt, svd.singular_values.mean())
}

fn orthogonality_cost(m: &Matrix3x4<f64>) -> f64 {
    let sv = m.fixed_view::<3, 3>(0, 0).singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 1.0;
    }
    (max - sv.min()) / max
}

/// Pose from correspondences with known intrinsics.
///
/// The linear system is solved in normalized camera coordinates. Its two
/// weakest right singular vectors span every candidate `[R | t]` (exactly so
/// when the points lie on only two lines); the family is searched for members
/// whose left block is a scaled rotation, and each such member is refined by
/// [`refine_pose`]. The refined pose with the lowest error wins.
pub fn estimate_pose(k: &Matrix3<f64>, corrs: &[PointCorrespondence]) -> Result<PoseFit> {
    if corrs.len() < 6 {
        return Err(Error::InsufficientPoints {
            required: 6,
            got: corrs.len(),
        });
    }
    let k_inv = k
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("singular intrinsics".into()))?;
    let normalized: Vec<PointCorrespondence> = corrs
        .iter()
        .map(|c| {
            let h = k_inv * c.pixel.push(1.0);
            PointCorrespondence::new(c.world, Vector2::new(h.x / h.z, h.y / h.z))
        })
        .collect();
    let (a, tw, ti) = design_matrix(&normalized);
    let basis = smallest_right_singular_vectors(&a, 2);
    let n1 = denormalize(&basis[0], &tw, &ti);
    let n2 = denormalize(&basis[1], &tw, &ti);
    let n1 = n1 / n1.norm();
    let n2 = n2 / n2.norm();
    let member = |theta: f64| n1 * theta.cos() + n2 * theta.sin();

    const GRID: usize = 360;
    let step = std::f64::consts::PI / GRID as f64;
    let costs: Vec<f64> = (0..GRID)
        .map(|i| orthogonality_cost(&member(i as f64 * step)))
        .collect();
    let mut seeds = Vec::new();
    for i in 0..GRID {
        let prev = costs[(i + GRID - 1) % GRID];
        let next = costs[(i + 1) % GRID];
        if costs[i] <= prev && costs[i] <= next {
            seeds.push(i as f64 * step);
        }
    }
    seeds.sort_by(|a, b| {
        let ca = orthogonality_cost(&member(*a));
        let cb = orthogonality_cost(&member(*b));
        ca.total_cmp(&cb)
    });
    seeds.truncate(4);

    let mut best: Option<PoseFit> = None;
    for seed in seeds {
        // golden-section search inside the bracketing grid cell pair
        let (mut lo, mut hi) = (seed - step, seed + step);
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let m1 = hi - gr * (hi - lo);
            let m2 = lo + gr * (hi - lo);
            if orthogonality_cost(&member(m1)) < orthogonality_cost(&member(m2)) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let mut m = member(0.5 * (lo + hi));
        if m.fixed_view::<3, 3>(0, 0).determinant() < 0.0 {
            m = -m;
        }
        let (r0, scale) = nearest_rotation(&m.fixed_view::<3, 3>(0, 0).into_owned());
        let t0 = m.column(3) / scale;
        let in_front = corrs
            .iter()
            .filter(|c| (r0 * c.world + t0).z > 0.0)
            .count();
        if in_front * 2 < corrs.len() {
            continue;
        }
        let fit = refine_pose(k, &r0, &t0, corrs, 100, 1e-10);
        if fit.rms.is_finite() && best.as_ref().is_none_or(|b| fit.rms < b.rms) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::CalibrationFailed("no pose places the points in front of the source".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> Matrix3<f64> {
        Matrix3::new(1125.0, 0.0, 255.5, 0.0, 1125.0, 255.5, 0.0, 0.0, 1.0)
    }

    fn stick(origin: Vector3<f64>, dir: Vector3<f64>, axial: [f64; 4]) -> Vec<Vector3<f64>> {
        axial.iter().map(|&a| origin + dir.normalize() * a).collect()
    }

    fn truth(theta: f64) -> (Matrix3<f64>, Vector3<f64>) {
        let (s, c) = theta.sin_cos();
        let r = Matrix3::from_rows(&[
            Vector3::new(-s, c, 0.0).transpose(),
            Vector3::new(0.0, 0.0, -1.0).transpose(),
            Vector3::new(-c, -s, 0.0).transpose(),
        ]);
        let center = Vector3::new(300.0 * c, 300.0 * s, 0.0);
        (r, -(r * center))
    }

    #[test]
    fn two_sticks_determine_pose_with_known_intrinsics() {
        let (r, t) = truth(0.7);
        let mut world = stick(Vector3::new(30.0, 5.0, 30.0), Vector3::new(-0.3, 0.8, 0.9), [0.0, 15.0, 35.0, 60.0]);
        world.extend(stick(Vector3::new(-25.0, -20.0, -45.0), Vector3::new(0.7, 0.2, 0.6), [0.0, 20.0, 30.0, 60.0]));
        let p = ProjectionMatrix::compose(&k(), &r, &(-(r.transpose() * t)));
        let corrs: Vec<_> = world
            .iter()
            .map(|w| PointCorrespondence::new(*w, p.project(w).unwrap()))
            .collect();
        let fit = estimate_pose(&k(), &corrs).unwrap();
        assert!(fit.rms < 1e-6, "rms {}", fit.rms);
        assert!((fit.center() - p.source_position().unwrap()).norm() < 1e-4);
    }

    #[test]
    fn refinement_reduces_noisy_error_from_perturbed_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (r, t) = truth(2.1);
        let world: Vec<Vector3<f64>> = (0..30)
            .map(|_| Vector3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)))
            .collect();
        let noise = Normal::new(0.0, 0.3).unwrap();
        let p = ProjectionMatrix::compose(&k(), &r, &(-(r.transpose() * t)));
        let corrs: Vec<_> = world
            .iter()
            .map(|w| {
                let px = p.project(w).unwrap();
                PointCorrespondence::new(*w, px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
            })
            .collect();
        let r0 = Rotation3::new(Vector3::new(0.02, -0.01, 0.015)).into_inner() * r;
        let fit = refine_pose(&k(), &r0, &(t + Vector3::new(2.0, -1.0, 3.0)), &corrs, 50, 1e-10);
        assert!(fit.rms < 0.5, "rms {}", fit.rms);
        assert!((fit.center() - p.source_position().unwrap()).norm() < 1.0);
    }
}
