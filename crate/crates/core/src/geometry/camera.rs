use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};

use super::{DEPTH_EPS, MAX_CONDITION};
use crate::{Error, Result};

/// Per-view 3×4 projection matrix in canonical scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix {
    m: Matrix3x4<f64>,
}

/// `P = K·[R | −R·C]`: intrinsics `K` (upper triangular, `K[2][2] = 1`),
/// rotation `R` (world → camera) and source position `C` (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraDecomposition {
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl CameraDecomposition {
    pub fn compose(&self) -> ProjectionMatrix {
        ProjectionMatrix::compose(&self.intrinsics, &self.rotation, &self.center)
    }

    pub fn focal_lengths(&self) -> (f64, f64) {
        (self.intrinsics[(0, 0)], self.intrinsics[(1, 1)])
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.intrinsics[(0, 2)], self.intrinsics[(1, 2)])
    }

    /// Unit principal-axis direction in the world frame (source toward detector).
    pub fn principal_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

impl ProjectionMatrix {
    /// Wraps `m`, rescaling it to canonical form. Only a zero matrix is rejected.
    pub fn new(m: Matrix3x4<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite projection matrix".into()));
        }
        let dir_norm = m.fixed_view::<1, 3>(2, 0).norm();
        let scale = if dir_norm > 0.0 { dir_norm } else { m.norm() };
        if scale == 0.0 {
            return Err(Error::InvalidInput("zero projection matrix".into()));
        }
        let mut m = m / scale;
        if m.fixed_view::<3, 3>(0, 0).determinant() < 0.0 {
            m = -m;
        }
        Ok(Self { m })
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        Self::new(Matrix3x4::from_row_slice(v))
    }

    /// `K·[R | −R·C]`.
    pub fn compose(k: &Matrix3<f64>, r: &Matrix3<f64>, c: &Vector3<f64>) -> Self {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        rt.set_column(3, &(-(r * c)));
        Self::new(k * rt).expect("composed camera is finite and nonzero")
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.m
    }

    pub fn left_block(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.m[(r, c)];
            }
        }
        out
    }

    /// `P·[x; 1]`; the third component is the depth (mm) along the principal axis.
    #[inline]
    pub fn homogeneous(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.m * Vector4::new(x.x, x.y, x.z, 1.0)
    }

    pub fn project(&self, x: &Vector3<f64>) -> Result<Vector2<f64>> {
        let h = self.homogeneous(x);
        if h.z.abs() < DEPTH_EPS {
            return Err(Error::PointAtInfinity { depth: h.z });
        }
        Ok(Vector2::new(h.x / h.z, h.y / h.z))
    }

    fn check_condition(&self) -> Result<Matrix3<f64>> {
        let left = self.left_block();
        let sv = left.singular_values();
        let (max, min) = (sv.max(), sv.min());
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularCamera { condition });
        }
        Ok(left)
    }

    /// The point `C` with `P·[C; 1] = 0`: the X-ray source position.
    pub fn source_position(&self) -> Result<Vector3<f64>> {
        let left = self.check_condition()?;
        let p4 = self.m.column(3).into_owned();
        let inv = left
            .try_inverse()
            .ok_or(Error::SingularCamera { condition: f64::INFINITY })?;
        Ok(-(inv * p4))
    }

    /// RQ factorization of the left block into intrinsics and rotation, plus
    /// the source position.
    pub fn decompose(&self) -> Result<CameraDecomposition> {
        let left = self.check_condition()?;
        let (k, r) = rq3(&left);
        let center = self.source_position()?;
        Ok(CameraDecomposition {
            intrinsics: k / k[(2, 2)],
            rotation: r,
            center,
        })
    }
}

/// `M = K·R` with `K` upper triangular with positive diagonal and `R`
/// orthonormal, by Gram–Schmidt on the rows of `M` from the bottom up.
fn rq3(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let m1 = m.row(0).transpose();
    let m2 = m.row(1).transpose();
    let m3 = m.row(2).transpose();
    let mut k = Matrix3::zeros();

    let k33 = m3.norm();
    let r3 = m3 / k33;
    k[(2, 2)] = k33;

    let k23 = m2.dot(&r3);
    let mut w2 = m2 - r3 * k23;
    // second pass keeps r2 ⟂ r3 to rounding
    w2 -= r3 * w2.dot(&r3);
    let k22 = w2.norm();
    let r2 = w2 / k22;
    k[(1, 1)] = k22;
    k[(1, 2)] = k23;

    let k13 = m1.dot(&r3);
    let k12 = m1.dot(&r2);
    let mut w1 = m1 - r3 * k13 - r2 * k12;
    w1 -= r3 * w1.dot(&r3) + r2 * w1.dot(&r2);
    let k11 = w1.norm();
    let r1 = w1 / k11;
    k[(0, 0)] = k11;
    k[(0, 1)] = k12;
    k[(0, 2)] = k13;

    let r = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    (k, r)
}
