//! FDK pre-weighting and row-wise ramp filtering.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::geometry::ProjectionMatrix;
use crate::{par, Error, Image, Result};

/// Per-view quantities entering the FDK weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewGeometry {
    pub matrix: ProjectionMatrix,
    /// Angular interval represented by this view, radians.
    pub d_angle_rad: f64,
    /// Source distance from the rotation axis, mm.
    pub source_axis_distance_mm: f64,
}

/// Cosine-weighted, ramp-filtered projection ready for backprojection.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredProjection {
    pub pixels: Image,
    pub matrix: ProjectionMatrix,
    /// Factor applied to every sample before the `1/s²` distance weight.
    pub weight: f64,
}

impl FilteredProjection {
    pub fn new(pixels: Image, matrix: ProjectionMatrix, weight: f64) -> Result<Self> {
        if !pixels.is_finite() || !weight.is_finite() {
            return Err(Error::InvalidInput("filtered projection is not finite".into()));
        }
        Ok(Self { pixels, matrix, weight })
    }
}

/// Scales each pixel by the cosine of the angle between its ray and the
/// principal axis, `d / sqrt(d² + u'² + v'²)`, evaluated through the
/// inverse intrinsics so non-square pixels and skew are handled.
pub fn cosine_weight(img: &Image, matrix: &ProjectionMatrix) -> Result<Image> {
    let k = matrix.decompose()?.intrinsics;
    let k_inv = k
        .try_inverse()
        .ok_or(Error::SingularCamera { condition: f64::INFINITY })?;
    let (w, h) = img.dims();
    Ok(Image::from_fn(w, h, |x, y| {
        let r = k_inv * nalgebra::Vector3::new(x as f64, y as f64, 1.0);
        let (a, b) = (r.x / r.z, r.y / r.z);
        (img.get(x, y) as f64 / (1.0 + a * a + b * b).sqrt()) as f32
    }))
}

/// Spatial band-limited ramp kernel tap at offset `n` for sample spacing `pitch`.
pub fn ramp_tap(n: i64, pitch: f64) -> f64 {
    if n == 0 {
        1.0 / (4.0 * pitch * pitch)
    } else if n % 2 == 0 {
        0.0
    } else {
        -1.0 / (PI * n as f64 * pitch).powi(2)
    }
}

/// Smallest length ≥ `n` with no prime factor above 5.
fn fft_friendly(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut m = m;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            m == 1
        })
        .unwrap()
}

struct RampPlan {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel: Vec<Complex<f64>>,
}

impl RampPlan {
    /// Padding to at least twice the row width makes the circular
    /// convolution equal the linear one over the row.
    fn new(width: usize, pitch: f64) -> Self {
        let len = fft_friendly(2 * width);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut kernel: Vec<Complex<f64>> = (0..len)
            .map(|i| {
                let n = if i <= len / 2 { i as i64 } else { i as i64 - len as i64 };
                Complex::new(ramp_tap(n, pitch), 0.0)
            })
            .collect();
        fwd.process(&mut kernel);
        let scale = 1.0 / len as f64;
        kernel.iter_mut().for_each(|k| *k *= scale);
        Self { len, fwd, inv, kernel }
    }

    fn apply(&self, row: &[f64], out: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        buf.clear();
        buf.extend(row.iter().map(|&v| Complex::new(v, 0.0)));
        buf.resize(self.len, Complex::new(0.0, 0.0));
        self.fwd.process(buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel) {
            *b *= k;
        }
        self.inv.process(buf);
        for (o, b) in out.iter_mut().zip(buf.iter()) {
            *o = b.re;
        }
    }
}

/// Discrete convolution `Σ_n h(n) g(k - n)` of one row with the ramp kernel.
pub fn ramp_filter_row(row: &[f64], pixel_pitch: f64) -> Vec<f64> {
    let plan = RampPlan::new(row.len(), pixel_pitch);
    let mut out = vec![0.0; row.len()];
    plan.apply(row, &mut out, &mut Vec::new());
    out
}

/// Row-wise ramp filter of an image.
pub fn ramp_filter(img: &Image, pixel_pitch: f64) -> Result<Image> {
    let (w, h) = img.dims();
    if w < 2 {
        return Err(Error::InvalidInput("ramp filter needs rows of at least 2 pixels".into()));
    }
    let plan = RampPlan::new(w, pixel_pitch);
    let mut buf = Vec::with_capacity(plan.len);
    let mut row = vec![0.0; w];
    let mut out_row = vec![0.0; w];
    let mut out = Image::new(w, h);
    for y in 0..h {
        for (r, v) in row.iter_mut().zip(img.row(y)) {
            *r = *v as f64;
        }
        plan.apply(&row, &mut out_row, &mut buf);
        for (o, v) in out.row_mut(y).iter_mut().zip(&out_row) {
            *o = *v as f32;
        }
    }
    Ok(out)
}

/// Cosine weighting and ramp filtering of one line-integral projection.
///
/// The FDK weight is `½ · Δβ · R · D · Δ`, where `D` is the source–detector
/// distance and `Δ` the pixel pitch; the voxel-dependent `1/s²` is applied
/// during backprojection.
pub fn filter_projection(img: &Image, view: &ViewGeometry, pixel_pitch: f64) -> Result<FilteredProjection> {
    let weighted = cosine_weight(img, &view.matrix)?;
    let filtered = ramp_filter(&weighted, pixel_pitch)?;
    let (fx, _) = view.matrix.decompose()?.focal_lengths();
    let sdd = fx * pixel_pitch;
    let weight = 0.5 * view.d_angle_rad * view.source_axis_distance_mm * sdd * pixel_pitch;
    FilteredProjection::new(filtered, view.matrix, weight)
}

/// Filters every view in parallel.
pub fn filter_stack(images: &[Image], views: &[ViewGeometry], pixel_pitch: f64) -> Result<Vec<FilteredProjection>> {
    if images.len() != views.len() {
        return Err(Error::InvalidInput(format!(
            "{} projections but {} view geometries",
            images.len(),
            views.len()
        )));
    }
    let pairs: Vec<(&Image, &ViewGeometry)> = images.iter().zip(views).collect();
    par::map_slice(&pairs, |(img, v)| filter_projection(img, v, pixel_pitch))
        .into_iter()
        .collect()
}
