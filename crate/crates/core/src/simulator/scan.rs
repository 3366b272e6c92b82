//! Raw detector scans with photon noise, dark current and stuck pixels.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::trajectory::{stream_rng, STREAM_DEFECTS, STREAM_REFERENCE, STREAM_VIEW_NOISE};
use super::{forward_project, true_views, AnalyticPhantom, TrajectoryConfig, TrueView};
use crate::preprocess::{DefectMap, ProjectionStack, RawFrame, StackKind};
use crate::{par, Error, Image, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// When false, frames carry exact expected counts.
    pub enabled: bool,
    /// Expected counts of an unattenuated pixel above the dark level.
    pub photon_count: f64,
    pub dark_offset: f64,
    pub read_noise: f64,
    pub saturation: f64,
    pub n_darks: usize,
    pub n_flats: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            photon_count: 20000.0,
            dark_offset: 100.0,
            read_noise: 2.0,
            saturation: 65535.0,
            n_darks: 4,
            n_flats: 4,
        }
    }
}

/// A pixel that reads `value` in every frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StuckPixel {
    pub x: usize,
    pub y: usize,
    pub value: f32,
}

/// `count` distinct isolated stuck pixels, cycling through dead (0), hot
/// (saturated) and mid-range values.
pub fn random_stuck_pixels(width: usize, height: usize, count: usize, saturation: f32, seed: u64) -> Vec<StuckPixel> {
    let mut rng = stream_rng(seed, STREAM_DEFECTS, 0);
    let mut taken = DefectMap::empty(width, height);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let (x, y) = (rng.random_range(1..width - 1), rng.random_range(1..height - 1));
        // keep defects isolated so every cluster is a single pixel
        let crowded = (y - 1..=y + 1).any(|yy| (x - 1..=x + 1).any(|xx| taken.get(xx, yy)));
        if crowded {
            continue;
        }
        taken.set(x, y, true);
        let value = match out.len() % 3 {
            0 => 0.0,
            1 => saturation,
            _ => (0.37 * saturation).round(),
        };
        out.push(StuckPixel { x, y, value });
    }
    out
}

#[derive(Debug, Clone)]
pub struct RawScan {
    pub stack: ProjectionStack,
    pub darks: Vec<RawFrame>,
    pub flats: Vec<RawFrame>,
    pub views: Vec<TrueView>,
    pub defects: DefectMap,
}

fn counts(
    line_integrals: Option<&Image>,
    width: usize,
    height: usize,
    beam: bool,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Image {
    let read = Normal::new(0.0, noise.read_noise.max(0.0)).expect("finite read noise");
    let mut data = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let t = line_integrals.map_or(1.0, |p| (-(p.data()[i] as f64)).exp());
        let mean = if beam { noise.photon_count * t } else { 0.0 };
        let v = if noise.enabled {
            let photons = if mean > 0.0 {
                Poisson::new(mean).expect("positive rate").sample(rng)
            } else {
                0.0
            };
            photons + noise.dark_offset + read.sample(rng)
        } else {
            mean + noise.dark_offset
        };
        data.push(v.clamp(0.0, noise.saturation) as f32);
    }
    Image::from_vec(width, height, data)
}

fn apply_defects(img: &mut Image, defects: &[StuckPixel]) {
    for d in defects {
        img.set(d.x, d.y, d.value);
    }
}

/// Renders every view of the trajectory plus dark and flat references.
/// Each frame draws from its own random stream, so the result does not
/// depend on the number of worker threads.
pub fn render_raw_scan(
    ph: &AnalyticPhantom,
    cfg: &TrajectoryConfig,
    noise: &NoiseConfig,
    defects: &[StuckPixel],
) -> Result<RawScan> {
    if !(noise.photon_count > 0.0) {
        return Err(Error::InvalidInput("photon count must be positive".into()));
    }
    let (w, h) = (cfg.width, cfg.height);
    let mut map = DefectMap::empty(w, h);
    for d in defects {
        if d.x >= w || d.y >= h {
            return Err(Error::InvalidInput(format!("defect ({}, {}) outside detector", d.x, d.y)));
        }
        map.set(d.x, d.y, true);
    }
    let views = true_views(cfg)?;
    let frames = par::map_range(views.len(), |index| -> Result<Image> {
        let p = forward_project(ph, &views[index].matrix, w, h)?;
        let mut rng = stream_rng(cfg.seed, STREAM_VIEW_NOISE, index as u64);
        let mut img = counts(Some(&p), w, h, true, noise, &mut rng);
        apply_defects(&mut img, defects);
        Ok(img)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let reference = |n: usize, beam: bool, offset: u64| -> Result<Vec<RawFrame>> {
        (0..n)
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, STREAM_REFERENCE, offset + i as u64);
                let mut img = counts(None, w, h, beam, noise, &mut rng);
                apply_defects(&mut img, defects);
                RawFrame::new(img)
            })
            .collect()
    };
    Ok(RawScan {
        stack: ProjectionStack::new(frames, cfg.pixel_pitch_mm, StackKind::Raw)?,
        darks: reference(noise.n_darks, false, 0)?,
        flats: reference(noise.n_flats, true, 1 << 32)?,
        views,
        defects: map,
    })
}
