//! Circular source trajectories with optional jitter and wobble.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::ProjectionMatrix;
use crate::reconstruction::ViewGeometry;
use crate::{Error, Result};

/// Stream tags keep the random sequences of different purposes apart.
pub(crate) const STREAM_TRAJECTORY: u64 = 1;
pub(crate) const STREAM_VIEW_NOISE: u64 = 2;
pub(crate) const STREAM_REFERENCE: u64 = 3;
pub(crate) const STREAM_DEFECTS: u64 = 4;

/// Generator for stream `(seed, tag, index)`, independent of evaluation order.
pub(crate) fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub n_views: usize,
    /// Source distance from the rotation axis, mm.
    pub source_radius_mm: f64,
    /// Source to detector distance, mm.
    pub detector_distance_mm: f64,
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_mm: f64,
    /// Standard deviation of the angular step between consecutive views,
    /// degrees.
    pub jitter_deg: f64,
    /// Standard deviation of each component of the per-view translation of
    /// the source–detector assembly, mm.
    pub wobble_mm: f64,
    pub seed: u64,
}

/// Side length of the default square detector.
pub const DETECTOR_SIDE_MM: f64 = 409.6;

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            n_views: 450,
            source_radius_mm: 300.0,
            detector_distance_mm: 600.0,
            width: 3000,
            height: 3000,
            pixel_pitch_mm: DETECTOR_SIDE_MM / 3000.0,
            jitter_deg: 0.0,
            wobble_mm: 0.0,
            seed: 1,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::InvalidInput("trajectory needs at least one view".into()));
        }
        let positive = [self.source_radius_mm, self.detector_distance_mm, self.pixel_pitch_mm];
        if !positive.iter().all(|&v| v > 0.0 && v.is_finite()) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "source radius, detector distance, pitch and detector size must be positive".into(),
            ));
        }
        if !(self.jitter_deg >= 0.0 && self.wobble_mm >= 0.0) {
            return Err(Error::InvalidInput("jitter and wobble must be non-negative".into()));
        }
        Ok(())
    }

    /// The same scan without perturbations.
    /// Same physical detector sampled at `width` × `height` pixels.
    pub fn resampled(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixel_pitch_mm: self.pixel_pitch_mm * self.width as f64 / width as f64,
            ..*self
        }
    }

    pub fn ideal(&self) -> Self {
        Self {
            jitter_deg: 0.0,
            wobble_mm: 0.0,
            ..*self
        }
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        let f = self.detector_distance_mm / self.pixel_pitch_mm;
        let cx = 0.5 * (self.width as f64 - 1.0);
        let cy = 0.5 * (self.height as f64 - 1.0);
        Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0)
    }
}

/// Ground truth of one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueView {
    pub angle_rad: f64,
    pub source_mm: Vector3<f64>,
    pub matrix: ProjectionMatrix,
}

/// Views on a circle about the z axis. Jitter perturbs each angular step;
/// the steps are then shifted to sum to one full turn, so the scan closes. The detector `u` axis follows the
/// direction of motion, `v` points down (-z), and the principal axis passes
/// through the rotation axis unless wobble displaces the assembly.
pub fn true_views(cfg: &TrajectoryConfig) -> Result<Vec<TrueView>> {
    cfg.validate()?;
    let k = cfg.intrinsics();
    let jitter = Normal::new(0.0, cfg.jitter_deg.to_radians()).expect("validated");
    let wobble = Normal::new(0.0, cfg.wobble_mm).expect("validated");
    let n = cfg.n_views;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| stream_rng(cfg.seed, STREAM_TRAJECTORY, i as u64)).collect();
    let mut errors: Vec<f64> = rngs.iter_mut().map(|r| jitter.sample(r)).collect();
    let mean = errors.iter().sum::<f64>() / n as f64;
    errors.iter_mut().for_each(|e| *e -= mean);
    let mut drift = 0.0;
    Ok(rngs
        .into_iter()
        .zip(errors)
        .enumerate()
        .map(|(i, (mut rng, err))| {
            let angle = 2.0 * PI * i as f64 / n as f64 + drift;
            drift += err;
            let shift = Vector3::new(wobble.sample(&mut rng), wobble.sample(&mut rng), wobble.sample(&mut rng));
            let (s, c) = angle.sin_cos();
            let r = Matrix3::new(-s, c, 0.0, 0.0, 0.0, -1.0, -c, -s, 0.0);
            let source = Vector3::new(c, s, 0.0) * cfg.source_radius_mm + shift;
            TrueView {
                angle_rad: angle,
                source_mm: source,
                matrix: ProjectionMatrix::compose(&k, &r, &source),
            }
        })
        .collect())
}

pub fn make_trajectory(cfg: &TrajectoryConfig) -> Result<Vec<ProjectionMatrix>> {
    Ok(true_views(cfg)?.into_iter().map(|v| v.matrix).collect())
}

/// Geometry of the unperturbed circle: equal angular steps and the nominal
/// source radius.
pub fn ideal_view_geometries(cfg: &TrajectoryConfig) -> Result<Vec<ViewGeometry>> {
    let d_angle = 2.0 * PI / cfg.n_views as f64;
    Ok(make_trajectory(&cfg.ideal())?
        .into_iter()
        .map(|matrix| ViewGeometry {
            matrix,
            d_angle_rad: d_angle,
            source_axis_distance_mm: cfg.source_radius_mm,
        })
        .collect())
}
