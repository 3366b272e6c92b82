use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};

use super::{PointCorrespondence, ProjectionMatrix};
use crate::{Error, Result};

/// Relative singular-value threshold of the centered world-point cloud below
/// which the points are treated as coplanar (or collinear).
pub const DEGENERATE_RANK_TOL: f64 = 1e-8;

/// True when the world points span fewer than three dimensions.
pub fn scatter_is_degenerate(points: &[Vector3<f64>]) -> bool {
    if points.len() < 4 {
        return true;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        scatter += d * d.transpose();
    }
    // singular values of the centered cloud are square roots of these
    let eig = scatter.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min().max(0.0);
    max <= 0.0 || min.sqrt() <= DEGENERATE_RANK_TOL * max.sqrt()
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to `target`.
fn similarity3(points: impl Iterator<Item = Vector3<f64>> + Clone) -> Matrix4<f64> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mean_dist = points.map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { 3f64.sqrt() / mean_dist } else { 1.0 };
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t[(0, 3)] = -s * mean.x;
    t[(1, 3)] = -s * mean.y;
    t[(2, 3)] = -s * mean.z;
    t
}

fn similarity2(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { 2f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

/// Builds the conditioned `2n × 12` DLT design matrix and the similarities
/// used to condition it.
pub(crate) fn design_matrix(
    corrs: &[PointCorrespondence],
) -> (DMatrix<f64>, Matrix4<f64>, Matrix3<f64>) {
    let tw = similarity3(corrs.iter().map(|c| c.world));
    let ti = similarity2(corrs.iter().map(|c| c.pixel));
    let mut a = DMatrix::zeros(2 * corrs.len(), 12);
    for (i, c) in corrs.iter().enumerate() {
        let x = tw * c.world.push(1.0);
        let u = ti * c.pixel.push(1.0);
        let (u, v) = (u.x / u.z, u.y / u.z);
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -u * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -v * x[j];
        }
    }
    (a, tw, ti)
}

/// Right singular vectors of `a` sorted by ascending singular value.
pub(crate) fn smallest_right_singular_vectors(a: &DMatrix<f64>, count: usize) -> Vec<[f64; 12]> {
    // pad to at least 12 rows so the SVD yields the full right basis
    let a = if a.nrows() < 12 {
        let mut p = DMatrix::zeros(12, 12);
        p.view_mut((0, 0), (a.nrows(), 12)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    order
        .into_iter()
        .take(count)
        .map(|r| {
            let mut v = [0.0; 12];
            for (k, x) in v.iter_mut().enumerate() {
                *x = vt[(r, k)];
            }
            v
        })
        .collect()
}

/// Undoes the conditioning: `P = T_img⁻¹ · P̃ · T_world`.
pub(crate) fn denormalize(v: &[f64; 12], tw: &Matrix4<f64>, ti: &Matrix3<f64>) -> Matrix3x4<f64> {
    let pn = Matrix3x4::from_row_slice(v);
    let ti_inv = ti.try_inverse().expect("similarity is invertible");
    ti_inv * pn * tw
}

/// Linear least-squares projection matrix from at least six correspondences.
///
/// Both point sets are conditioned with isotropic similarities before the
/// homogeneous system is solved via SVD; the result is returned in canonical
/// scale.
pub fn dlt_estimate(corrs: &[PointCorrespondence]) -> Result<ProjectionMatrix> {
    if corrs.len() < 6 {
        return Err(Error::InsufficientPoints {
            required: 6,
            got: corrs.len(),
        });
    }
    if !corrs.iter().all(PointCorrespondence::is_finite) {
        return Err(Error::InvalidInput("non-finite correspondence".into()));
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world).collect();
    if scatter_is_degenerate(&world) {
        return Err(Error::DegenerateConfiguration(
            "world points are coplanar or collinear".into(),
        ));
    }
    let (a, tw, ti) = design_matrix(corrs);
    let v = smallest_right_singular_vectors(&a, 1)[0];
    ProjectionMatrix::new(denormalize(&v, &tw, &ti))
}
